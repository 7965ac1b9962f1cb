//! Price and metadata files.
//!
//! Long layout: `date,ticker,close`, one row per observation.
//! Wide layout: `date,<ticker1>,<ticker2>,...`, empty cell for missing.
//! Metadata: `ticker,sector,market`.
//! Lines starting with `#` are ignored everywhere.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use gapscope_core::panel::PricePanel;

use crate::error::{CliError, CliResult};

/// Sector given to every ticker when no metadata file is supplied.
pub const DEFAULT_SECTOR: &str = "unassigned";
/// Market given to every ticker when no metadata file is supplied.
pub const DEFAULT_MARKET: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Long if the header is exactly `date,ticker,close`, wide otherwise.
    Auto,
    Long,
    Wide,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub sector_of: BTreeMap<String, String>,
    pub market_of: BTreeMap<String, String>,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(source: &str, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line());
    match line {
        Some(l) => CliError::data(format!("{source}:{l}: {e}")),
        None => CliError::data(format!("{source}: {e}")),
    }
}

fn parse_date(source: &str, line: u64, s: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| {
        CliError::data(format!(
            "{source}:{line}: cannot parse date '{s}' (expected YYYY-MM-DD)"
        ))
    })
}

fn parse_price(source: &str, line: u64, s: &str) -> CliResult<f64> {
    s.parse::<f64>()
        .map_err(|_| CliError::data(format!("{source}:{line}: cannot parse close '{s}'")))
}

/// Raw `(date, ticker, close)` rows of a price file.
pub fn read_observations<R: Read>(r: R, source: &str, layout: Layout) -> CliResult<Vec<(NaiveDate, String, f64)>> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(source, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let is_long = header.iter().map(String::as_str).eq(["date", "ticker", "close"]);
    let layout = match layout {
        Layout::Auto if is_long => Layout::Long,
        Layout::Auto => Layout::Wide,
        l => l,
    };
    let mut out = Vec::new();
    match layout {
        Layout::Long => {
            if !is_long {
                return Err(CliError::data(format!(
                    "{source}:1: long layout needs the header date,ticker,close, found {}",
                    header.join(",")
                )));
            }
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_err(source, e))?;
                let line = line_of(&rec);
                let date = parse_date(source, line, &rec[0])?;
                if rec[1].is_empty() {
                    return Err(CliError::data(format!("{source}:{line}: empty ticker")));
                }
                out.push((date, rec[1].to_string(), parse_price(source, line, &rec[2])?));
            }
        }
        Layout::Wide | Layout::Auto => {
            if header.first().map(String::as_str) != Some("date") || header.len() < 2 {
                return Err(CliError::data(format!(
                    "{source}:1: wide layout needs the header date,<ticker>,..., found {}",
                    header.join(",")
                )));
            }
            if let Some(empty) = header.iter().skip(1).position(String::is_empty) {
                return Err(CliError::data(format!(
                    "{source}:1: column {} has an empty ticker",
                    empty + 2
                )));
            }
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_err(source, e))?;
                let line = line_of(&rec);
                let date = parse_date(source, line, &rec[0])?;
                for (ticker, cell) in header.iter().skip(1).zip(rec.iter().skip(1)) {
                    if !cell.is_empty() {
                        out.push((date, ticker.clone(), parse_price(source, line, cell)?));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn read_meta<R: Read>(r: R, source: &str) -> CliResult<Meta> {
    let mut rdr = reader(r);
    let header = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
    if !header.iter().eq(["ticker", "sector", "market"]) {
        return Err(CliError::data(format!(
            "{source}:1: metadata needs the header ticker,sector,market, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut sector_of = BTreeMap::new();
    let mut market_of = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let line = line_of(&rec);
        if rec.iter().any(str::is_empty) {
            return Err(CliError::data(format!("{source}:{line}: empty field")));
        }
        let t = rec[0].to_string();
        let prev = sector_of.insert(t.clone(), rec[1].to_string());
        market_of.insert(t.clone(), rec[2].to_string());
        if prev.is_some() {
            return Err(CliError::data(format!("{source}:{line}: ticker {t} listed twice")));
        }
    }
    Ok(Meta { sector_of, market_of })
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Build a panel from observations and optional metadata. Without metadata
/// every ticker gets [`DEFAULT_SECTOR`] and [`DEFAULT_MARKET`].
pub fn assemble_panel(obs: Vec<(NaiveDate, String, f64)>, meta: Option<&Meta>) -> CliResult<PricePanel> {
    let mut tickers: Vec<&str> = obs.iter().map(|o| o.1.as_str()).collect();
    tickers.sort_unstable();
    tickers.dedup();
    let (sector_of, market_of) = match meta {
        Some(m) => {
            if let Some(t) = tickers.iter().find(|t| !m.sector_of.contains_key(**t)) {
                return Err(CliError::data(format!("ticker {t} has no entry in the metadata file")));
            }
            let pick = |map: &BTreeMap<String, String>| {
                tickers
                    .iter()
                    .map(|t| (t.to_string(), map[*t].clone()))
                    .collect::<BTreeMap<_, _>>()
            };
            (pick(&m.sector_of), pick(&m.market_of))
        }
        None => {
            let all = |v: &str| {
                tickers
                    .iter()
                    .map(|t| (t.to_string(), v.to_string()))
                    .collect::<BTreeMap<_, _>>()
            };
            (all(DEFAULT_SECTOR), all(DEFAULT_MARKET))
        }
    };
    Ok(PricePanel::from_observations(obs, sector_of, market_of)?)
}

pub fn load_price_panel(prices: &Path, meta: Option<&Path>, layout: Layout) -> CliResult<PricePanel> {
    let source = prices.display().to_string();
    let obs = read_observations(open(prices)?, &source, layout)?;
    if obs.is_empty() {
        return Err(CliError::data(format!("{source}: no observations")));
    }
    let meta = match meta {
        Some(p) => Some(read_meta(open(p)?, &p.display().to_string())?),
        None => None,
    };
    assemble_panel(obs, meta.as_ref()).map_err(|e| e.context(source))
}

/// Long layout, rows by date then ticker column order. Prices use the
/// shortest representation that reads back to the same double.
pub fn write_long<W: Write>(mut w: W, panel: &PricePanel) -> std::io::Result<()> {
    writeln!(w, "date,ticker,close")?;
    for (d, t, c) in panel.observations() {
        writeln!(w, "{d},{t},{c}")?;
    }
    Ok(())
}

pub fn write_meta<W: Write>(mut w: W, panel: &PricePanel) -> std::io::Result<()> {
    writeln!(w, "ticker,sector,market")?;
    for t in panel.tickers() {
        writeln!(w, "{t},{},{}", panel.sector_of()[t], panel.market_of()[t])?;
    }
    Ok(())
}
