//! Price and return panels, rolling windows and per-window z-scoring.
//!
//! Panels are stored row-major with one row per trading date and one column
//! per ticker. Missing observations are `None`; nothing is ever imputed.
//! Rolling windows are end-anchored: a window of length `T` ending at `tau`
//! covers return rows `tau - T .. tau` (0-based, end exclusive), which is the
//! 1-based span `tau - T + 1 ..= tau`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned daily close prices for a set of tickers.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    sector_of: BTreeMap<String, String>,
    market_of: BTreeMap<String, String>,
    close: Vec<Option<f64>>,
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    match dates.windows(2).position(|w| w[0] >= w[1]) {
        Some(p) => Err(Error::UnsortedDates { position: p + 1 }),
        None => Ok(()),
    }
}

fn check_labels(
    tickers: &[String],
    sector_of: &BTreeMap<String, String>,
    market_of: &BTreeMap<String, String>,
) -> Result<()> {
    for t in tickers {
        if !sector_of.contains_key(t) || !market_of.contains_key(t) {
            return Err(Error::MissingLabel(t.clone()));
        }
    }
    Ok(())
}

fn check_unique_tickers(tickers: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for t in tickers {
        if !seen.insert(t.as_str()) {
            return Err(Error::Shape(alloc::format!("duplicate ticker {t}")));
        }
    }
    Ok(())
}

impl PricePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        sector_of: BTreeMap<String, String>,
        market_of: BTreeMap<String, String>,
        close: Vec<Option<f64>>,
    ) -> Result<Self> {
        if close.len() != dates.len() * tickers.len() {
            return Err(Error::Shape(alloc::format!(
                "{} prices for {} dates x {} tickers",
                close.len(),
                dates.len(),
                tickers.len()
            )));
        }
        check_dates(&dates)?;
        check_unique_tickers(&tickers)?;
        check_labels(&tickers, &sector_of, &market_of)?;
        for (k, p) in close.iter().enumerate() {
            if let Some(p) = *p {
                if !(p > 0.0) || !p.is_finite() {
                    let (t, i) = (k / tickers.len(), k % tickers.len());
                    return Err(Error::NonPositivePrice {
                        date: dates[t],
                        ticker: tickers[i].clone(),
                        price: p,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            sector_of,
            market_of,
            close,
        })
    }

    /// Build a panel from `(date, ticker, close)` observations.
    ///
    /// Dates become the sorted union of all observed dates; tickers are
    /// sorted by name. Exact duplicates are tolerated, conflicting
    /// duplicates are an error.
    pub fn from_observations<I>(
        observations: I,
        sector_of: BTreeMap<String, String>,
        market_of: BTreeMap<String, String>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (NaiveDate, String, f64)>,
    {
        let observations: Vec<(NaiveDate, String, f64)> = observations.into_iter().collect();
        let ticker_index: BTreeMap<String, usize> = observations
            .iter()
            .map(|o| o.1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        let tickers: Vec<String> = ticker_index.keys().cloned().collect();
        let mut cells: BTreeMap<(NaiveDate, usize), f64> = BTreeMap::new();
        let mut date_set = BTreeSet::new();
        for (date, ticker, price) in observations {
            if !(price > 0.0) || !price.is_finite() {
                return Err(Error::NonPositivePrice { date, ticker, price });
            }
            let col = ticker_index[&ticker];
            date_set.insert(date);
            if let Some(prev) = cells.insert((date, col), price) {
                if prev != price {
                    return Err(Error::ConflictingObservation {
                        date,
                        ticker,
                        first: prev,
                        second: price,
                    });
                }
            }
        }
        let dates: Vec<NaiveDate> = date_set.into_iter().collect();
        let row_of: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut close = alloc::vec![None; dates.len() * tickers.len()];
        for ((date, col), price) in cells {
            close[row_of[&date] * tickers.len() + col] = Some(price);
        }
        Self::new(dates, tickers, sector_of, market_of, close)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn price(&self, row: usize, col: usize) -> Option<f64> {
        self.close[row * self.tickers.len() + col]
    }

    pub fn sector_of(&self) -> &BTreeMap<String, String> {
        &self.sector_of
    }

    pub fn market_of(&self) -> &BTreeMap<String, String> {
        &self.market_of
    }

    /// Distinct market labels, sorted.
    pub fn markets(&self) -> Vec<String> {
        distinct_labels(&self.tickers, &self.market_of)
    }

    /// Present observations in (date, ticker-column) order.
    pub fn observations(&self) -> impl Iterator<Item = (NaiveDate, &str, f64)> + '_ {
        let n = self.tickers.len();
        self.close
            .iter()
            .enumerate()
            .filter_map(move |(k, p)| p.map(|p| (self.dates[k / n], self.tickers[k % n].as_str(), p)))
    }

    /// Sub-panel for one market, on that market's own trading calendar:
    /// dates on which none of its tickers traded are dropped.
    pub fn market_panel(&self, market: &str) -> Result<PricePanel> {
        let cols: Vec<usize> = (0..self.tickers.len())
            .filter(|&i| self.market_of[&self.tickers[i]] == market)
            .collect();
        if cols.is_empty() {
            return Err(Error::Config(alloc::format!("no tickers in market {market}")));
        }
        let rows: Vec<usize> = (0..self.dates.len())
            .filter(|&t| cols.iter().any(|&i| self.price(t, i).is_some()))
            .collect();
        let tickers: Vec<String> = cols.iter().map(|&i| self.tickers[i].clone()).collect();
        let mut close = Vec::with_capacity(rows.len() * cols.len());
        for &t in &rows {
            for &i in &cols {
                close.push(self.price(t, i));
            }
        }
        PricePanel::new(
            rows.iter().map(|&t| self.dates[t]).collect(),
            tickers.clone(),
            restrict(&self.sector_of, &tickers),
            restrict(&self.market_of, &tickers),
            close,
        )
    }
}

fn restrict(map: &BTreeMap<String, String>, keys: &[String]) -> BTreeMap<String, String> {
    keys.iter().map(|k| (k.clone(), map[k].clone())).collect()
}

fn distinct_labels(tickers: &[String], map: &BTreeMap<String, String>) -> Vec<String> {
    let set: BTreeSet<&String> = tickers.iter().map(|t| &map[t]).collect();
    set.into_iter().cloned().collect()
}

/// Daily log returns aligned to the second and later dates of a price panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    sector_of: BTreeMap<String, String>,
    market_of: BTreeMap<String, String>,
    returns: Vec<Option<f64>>,
}

impl ReturnPanel {
    /// Construct directly from return data (used by tests and generators).
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        sector_of: BTreeMap<String, String>,
        market_of: BTreeMap<String, String>,
        returns: Vec<Option<f64>>,
    ) -> Result<Self> {
        if returns.len() != dates.len() * tickers.len() {
            return Err(Error::Shape(alloc::format!(
                "{} returns for {} dates x {} tickers",
                returns.len(),
                dates.len(),
                tickers.len()
            )));
        }
        check_dates(&dates)?;
        check_unique_tickers(&tickers)?;
        check_labels(&tickers, &sector_of, &market_of)?;
        if returns.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("return"));
        }
        Ok(Self {
            dates,
            tickers,
            sector_of,
            market_of,
            returns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.returns[row * self.tickers.len() + col]
    }

    pub fn sector_of(&self) -> &BTreeMap<String, String> {
        &self.sector_of
    }

    pub fn market_of(&self) -> &BTreeMap<String, String> {
        &self.market_of
    }

    pub fn sectors(&self) -> Vec<String> {
        distinct_labels(&self.tickers, &self.sector_of)
    }

    pub fn markets(&self) -> Vec<String> {
        distinct_labels(&self.tickers, &self.market_of)
    }

    /// The single market label shared by every ticker, if there is one.
    pub fn market_label(&self) -> Option<&str> {
        let mut it = self.tickers.iter().map(|t| self.market_of[t].as_str());
        let first = it.next()?;
        it.all(|m| m == first).then_some(first)
    }

    /// Column indices of the tickers in `sector`.
    pub fn sector_columns(&self, sector: &str) -> Vec<usize> {
        (0..self.tickers.len())
            .filter(|&i| self.sector_of[&self.tickers[i]] == sector)
            .collect()
    }

    /// Panel restricted to the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> ReturnPanel {
        let tickers: Vec<String> = cols.iter().map(|&i| self.tickers[i].clone()).collect();
        let mut returns = Vec::with_capacity(self.dates.len() * cols.len());
        for t in 0..self.dates.len() {
            for &i in cols {
                returns.push(self.get(t, i));
            }
        }
        ReturnPanel {
            dates: self.dates.clone(),
            sector_of: restrict(&self.sector_of, &tickers),
            market_of: restrict(&self.market_of, &tickers),
            tickers,
            returns,
        }
    }

    /// The returns of column `col` over `window`, or `None` if any is missing.
    pub fn complete_column(&self, col: usize, window: WindowSpec) -> Option<Vec<f64>> {
        (window.start..window.end).map(|t| self.get(t, col)).collect()
    }
}

/// Log returns `ln(P(t) / P(t-1))`; absent wherever either price is absent.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    if panel.n_dates() < 2 {
        return Err(Error::TooFewDates {
            needed: 2,
            got: panel.n_dates(),
        });
    }
    let n = panel.n_assets();
    let mut returns = Vec::with_capacity((panel.n_dates() - 1) * n);
    for t in 1..panel.n_dates() {
        for i in 0..n {
            returns.push(match (panel.price(t - 1, i), panel.price(t, i)) {
                (Some(p0), Some(p1)) => Some(libm::log(p1 / p0)),
                _ => None,
            });
        }
    }
    Ok(ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        sector_of: panel.sector_of.clone(),
        market_of: panel.market_of.clone(),
        returns,
    })
}

/// A window over return rows `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: usize,
    pub end: usize,
}

impl WindowSpec {
    pub fn ending_at(end: usize, len: usize) -> Self {
        Self { start: end - len, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Row index of the last day in the window.
    pub fn last(&self) -> usize {
        self.end - 1
    }

    /// Enumerate end-anchored windows of `len` rows advancing by `step` over
    /// a panel of `n_rows`. Empty when `len > n_rows`.
    pub fn rolling(n_rows: usize, len: usize, step: usize) -> Result<Vec<WindowSpec>> {
        if len < 3 {
            return Err(Error::Config(alloc::format!("window length {len} < 3")));
        }
        if step == 0 {
            return Err(Error::Config("window step must be >= 1".into()));
        }
        Ok((len..=n_rows)
            .step_by(step)
            .map(|end| WindowSpec::ending_at(end, len))
            .collect())
    }
}

pub fn rolling_windows(returns: &ReturnPanel, len: usize, step: usize) -> Result<Vec<WindowSpec>> {
    WindowSpec::rolling(returns.n_dates(), len, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingData,
    ZeroVariance,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::MissingData => "missing data",
            DropReason::ZeroVariance => "zero variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedAsset {
    pub ticker: String,
    pub reason: DropReason,
}

/// Z-scored returns of the surviving assets of one window.
#[derive(Debug, Clone)]
pub struct StandardizedWindow {
    pub window: WindowSpec,
    pub end_date: NaiveDate,
    pub tickers: Vec<String>,
    /// Source column of each surviving asset.
    pub columns: Vec<usize>,
    /// `n_assets x T`, one row per asset.
    pub data: DMatrix<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dropped: Vec<DroppedAsset>,
}

impl StandardizedWindow {
    pub fn n_assets(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.data.ncols()
    }
}

/// Standardize every asset of `returns` over `window`.
pub fn standardize_window(returns: &ReturnPanel, window: WindowSpec) -> Result<StandardizedWindow> {
    let cols: Vec<usize> = (0..returns.n_assets()).collect();
    standardize_columns(returns, window, &cols)
}

/// Standardize the given columns over `window` using the population
/// standard deviation. Assets with missing data or zero variance are dropped
/// and reported; fewer than two survivors is an error.
pub fn standardize_columns(returns: &ReturnPanel, window: WindowSpec, cols: &[usize]) -> Result<StandardizedWindow> {
    if window.end > returns.n_dates() || window.start >= window.end {
        return Err(Error::WindowOutOfRange {
            start: window.start,
            end: window.end,
            len: returns.n_dates(),
        });
    }
    let t_len = window.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut kept = Vec::with_capacity(cols.len());
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut dropped = Vec::new();
    for &c in cols {
        let ticker = &returns.tickers[c];
        let Some(xs) = returns.complete_column(c, window) else {
            dropped.push(DroppedAsset {
                ticker: ticker.clone(),
                reason: DropReason::MissingData,
            });
            continue;
        };
        match zscore(&xs) {
            Some((z, m, s)) => {
                rows.push(z);
                kept.push(c);
                means.push(m);
                sds.push(s);
            }
            None => dropped.push(DroppedAsset {
                ticker: ticker.clone(),
                reason: DropReason::ZeroVariance,
            }),
        }
    }
    let end_date = returns.dates[window.last()];
    if kept.len() < 2 {
        return Err(Error::DegenerateWindow {
            end_date,
            surviving: kept.len(),
        });
    }
    let data = DMatrix::from_fn(kept.len(), t_len, |i, t| rows[i][t]);
    Ok(StandardizedWindow {
        window,
        end_date,
        tickers: kept.iter().map(|&c| returns.tickers[c].clone()).collect(),
        columns: kept,
        data,
        means,
        sds,
        dropped,
    })
}

/// `(z, mean, sd)` with the population sd, or `None` when the series is
/// constant up to rounding.
pub(crate) fn zscore(xs: &[f64]) -> Option<(Vec<f64>, f64, f64)> {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
    if !(sd > 64.0 * f64::EPSILON * scale) {
        return None;
    }
    Some((xs.iter().map(|x| (x - m) / sd).collect(), m, sd))
}
