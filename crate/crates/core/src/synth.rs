//! Factor-model price panels with scheduled volatility regimes.
//!
//! Returns follow `r_i(t) = beta_i f_m(t) + gamma_i f_s(i)(t) + eps_i(t)`
//! with independent zero-mean shocks whose scale is set by the regime active
//! on day `t`. Prices start at 100 and compound the log returns.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PricePanel;
use crate::portfolio::splitmix64;
use crate::series::DateInterval;

const FACTOR_STREAM: u64 = 0x6661_6374_6f72;
const ASSET_STREAM: u64 = 0x6173_7365_7473;

/// Volatility levels active on return days `start_day..=end_day` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub name: String,
    pub start_day: usize,
    pub end_day: usize,
    pub market_vol: f64,
    pub sector_vol: f64,
    pub idio_vol: f64,
    /// Per-sector replacement for `sector_vol`.
    #[serde(default)]
    pub sector_vol_override: BTreeMap<String, f64>,
}

impl Regime {
    pub fn len(&self) -> usize {
        self.end_day + 1 - self.start_day
    }

    pub fn is_empty(&self) -> bool {
        self.end_day < self.start_day
    }

    fn sector_vol_of(&self, sector: &str) -> f64 {
        self.sector_vol_override.get(sector).copied().unwrap_or(self.sector_vol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub market: String,
    /// First price date (moved forward to a weekday if needed).
    pub start_date: NaiveDate,
    /// Number of return days `D`; the panel has `D + 1` price dates.
    pub n_days: usize,
    /// Sector of each asset; its length is the asset count.
    pub sectors: Vec<String>,
    pub market_loadings: Vec<f64>,
    pub sector_loadings: Vec<f64>,
    /// Must tile days `1..=n_days` in order.
    pub regimes: Vec<Regime>,
    pub seed: u64,
    /// Student-t degrees of freedom for all shocks (rescaled to unit
    /// variance); Gaussian when absent.
    #[serde(default)]
    pub heavy_tail_df: Option<f64>,
}

impl SynthConfig {
    pub fn n_assets(&self) -> usize {
        self.sectors.len()
    }

    pub fn ticker(&self, i: usize) -> String {
        alloc::format!("{}{:03}", self.market, i)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.n_assets();
        if n == 0 {
            return bad("at least one asset is required".into());
        }
        if self.market.is_empty() {
            return bad("market label is empty".into());
        }
        if self.market_loadings.len() != n || self.sector_loadings.len() != n {
            return bad(alloc::format!(
                "expected {n} market and sector loadings, got {} and {}",
                self.market_loadings.len(),
                self.sector_loadings.len()
            ));
        }
        if self
            .market_loadings
            .iter()
            .chain(&self.sector_loadings)
            .any(|x| !x.is_finite())
        {
            return bad("loadings must be finite".into());
        }
        if self.n_days == 0 {
            return bad("n_days must be at least 1".into());
        }
        let mut next = 1;
        for r in &self.regimes {
            if r.start_day != next || r.end_day < r.start_day {
                return bad(alloc::format!(
                    "regime '{}' covers days {}..={}, expected it to start at day {next}{}",
                    r.name,
                    r.start_day,
                    r.end_day,
                    if r.start_day < next { " (overlap)" } else { "" }
                ));
            }
            let vols = [r.market_vol, r.sector_vol, r.idio_vol];
            if vols
                .iter()
                .chain(r.sector_vol_override.values())
                .any(|v| !(*v >= 0.0) || !v.is_finite())
            {
                return bad(alloc::format!(
                    "regime '{}' has a negative or non-finite volatility",
                    r.name
                ));
            }
            next = r.end_day + 1;
        }
        if next != self.n_days + 1 {
            return bad(alloc::format!(
                "regimes cover days 1..={} but n_days is {}",
                next - 1,
                self.n_days
            ));
        }
        if let Some(df) = self.heavy_tail_df {
            if !(df > 2.0) || !df.is_finite() {
                return bad("heavy_tail_df must exceed 2".into());
            }
        }
        Ok(())
    }

    /// Price dates: `n_days + 1` consecutive weekdays.
    pub fn dates(&self) -> Vec<NaiveDate> {
        business_days(self.start_date, self.n_days + 1)
    }

    /// Date of return day `day` (1-based).
    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.dates()[day]
    }
}

/// `count` consecutive weekdays starting on or after `start`.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

struct Shocks(Option<StudentT<f64>>, f64);

impl Shocks {
    fn new(df: Option<f64>) -> Result<Self> {
        match df {
            None => Ok(Self(None, 1.0)),
            Some(df) => Ok(Self(
                Some(StudentT::new(df).map_err(|_| Error::Config("invalid heavy_tail_df".into()))?),
                libm::sqrt((df - 2.0) / df),
            )),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.0 {
            None => rng.sample(StandardNormal),
            Some(t) => t.sample(rng) * self.1,
        }
    }
}

/// Daily log returns, one vector per asset, days `1..=n_days`.
pub fn generate_returns(config: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let shocks = Shocks::new(config.heavy_tail_df)?;
    let sector_names: Vec<&str> = config
        .sectors
        .iter()
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let d = config.n_days;

    let mut day_regime = Vec::with_capacity(d);
    for r in &config.regimes {
        day_regime.extend(core::iter::repeat_n(r, r.len()));
    }

    let mut frng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ FACTOR_STREAM));
    let mut market = Vec::with_capacity(d);
    let mut sector: BTreeMap<&str, Vec<f64>> = sector_names.iter().map(|s| (*s, Vec::with_capacity(d))).collect();
    for r in &day_regime {
        market.push(r.market_vol * shocks.draw(&mut frng));
        for s in &sector_names {
            let v = r.sector_vol_of(s) * shocks.draw(&mut frng);
            sector.get_mut(s).expect("sector present").push(v);
        }
    }

    let out = (0..config.n_assets())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(config.seed ^ ASSET_STREAM) ^ i as u64));
            let beta = config.market_loadings[i];
            let gamma = config.sector_loadings[i];
            let fs = &sector[config.sectors[i].as_str()];
            (0..d)
                .map(|t| beta * market[t] + gamma * fs[t] + day_regime[t].idio_vol * shocks.draw(&mut rng))
                .collect()
        })
        .collect();
    Ok(out)
}

pub fn generate_factor_panel(config: &SynthConfig) -> Result<PricePanel> {
    let returns = generate_returns(config)?;
    let dates = config.dates();
    let n = config.n_assets();
    let mut close = Vec::with_capacity(dates.len() * n);
    let mut log_level = alloc::vec![0.0f64; n];
    close.extend(core::iter::repeat_n(Some(100.0), n));
    for t in 0..config.n_days {
        for (i, r) in returns.iter().enumerate() {
            log_level[i] += r[t];
            close.push(Some(100.0 * libm::exp(log_level[i])));
        }
    }
    let tickers: Vec<String> = (0..n).map(|i| config.ticker(i)).collect();
    let sector_of = tickers.iter().cloned().zip(config.sectors.iter().cloned()).collect();
    let market_of = tickers.iter().map(|t| (t.clone(), config.market.clone())).collect();
    PricePanel::new(dates, tickers, sector_of, market_of, close)
}

/// Union of several panels (tickers must not collide).
pub fn combine_panels(panels: &[PricePanel]) -> Result<PricePanel> {
    let mut sector_of = BTreeMap::new();
    let mut market_of = BTreeMap::new();
    let mut obs = Vec::new();
    for p in panels {
        for t in p.tickers() {
            if sector_of.contains_key(t) || market_of.contains_key(t) {
                return Err(Error::Config(alloc::format!(
                    "ticker {t} appears in more than one panel"
                )));
            }
        }
        sector_of.extend(p.sector_of().iter().map(|(k, v)| (k.clone(), v.clone())));
        market_of.extend(p.market_of().iter().map(|(k, v)| (k.clone(), v.clone())));
        obs.extend(p.observations().map(|(d, t, c)| (d, String::from(t), c)));
    }
    PricePanel::from_observations(obs, sector_of, market_of)
}

/// Volatility template of one scenario regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLevels {
    pub days: usize,
    pub market_vol: f64,
    pub sector_vol: f64,
    pub idio_vol: f64,
    #[serde(default)]
    pub sector_vol_override: BTreeMap<String, f64>,
}

impl RegimeLevels {
    fn regime(&self, name: &str, start_day: usize) -> Regime {
        Regime {
            name: name.into(),
            start_day,
            end_day: start_day + self.days - 1,
            market_vol: self.market_vol,
            sector_vol: self.sector_vol,
            idio_vol: self.idio_vol,
            sector_vol_override: self.sector_vol_override.clone(),
        }
    }
}

/// The five scripted regimes of the shock scenario, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePhaseLayout {
    pub pre: RegimeLevels,
    /// Centered on the event day.
    pub shock: RegimeLevels,
    pub false_recovery: RegimeLevels,
    pub resync: RegimeLevels,
    pub stabilized: RegimeLevels,
}

impl Default for ThreePhaseLayout {
    fn default() -> Self {
        let structured = |days| RegimeLevels {
            days,
            market_vol: 0.002,
            sector_vol: 0.012,
            idio_vol: 0.01,
            sector_vol_override: [("C".into(), 0.0)].into_iter().collect(),
        };
        Self {
            pre: structured(160),
            shock: RegimeLevels {
                days: 5,
                market_vol: 0.15,
                sector_vol: 0.0,
                idio_vol: 0.01,
                sector_vol_override: BTreeMap::new(),
            },
            false_recovery: RegimeLevels {
                days: 12,
                market_vol: 0.004,
                sector_vol: 0.012,
                idio_vol: 0.01,
                sector_vol_override: BTreeMap::new(),
            },
            resync: RegimeLevels {
                days: 8,
                market_vol: 0.06,
                sector_vol: 0.0,
                idio_vol: 0.01,
                sector_vol_override: BTreeMap::new(),
            },
            stabilized: structured(80),
        }
    }
}

impl ThreePhaseLayout {
    /// Every regime identical: no phase contrast.
    pub fn null(days: [usize; 5], levels: &RegimeLevels) -> Self {
        let at = |d| RegimeLevels {
            days: d,
            ..levels.clone()
        };
        Self {
            pre: at(days[0]),
            shock: at(days[1]),
            false_recovery: at(days[2]),
            resync: at(days[3]),
            stabilized: at(days[4]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpan {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Scripted boundaries of a shock scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub event_date: NaiveDate,
    pub regimes: Vec<RegimeSpan>,
    pub pre: DateInterval,
    pub shock: DateInterval,
    /// Partial de-synchronization plus re-synchronization.
    pub false_recovery: DateInterval,
    pub stabilized: DateInterval,
    /// Trading days by which an ordinal pattern lags the regime it reads
    /// (the pattern on day t uses returns t-2..t).
    pub ordinal_lag: usize,
    /// First day whose ordinal pattern lies wholly in the stabilized regime.
    pub entropy_sustained_start: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SynthConfig,
    pub panel: PricePanel,
    pub truth: ScenarioTruth,
}

/// Default asset universe for the shock scenario: 48 assets in three
/// sectors of unequal size and strength, market loadings spread over
/// [0.8, 1.2].
pub fn default_scenario_base(seed: u64) -> SynthConfig {
    let sizes = [("A", 22usize), ("B", 14), ("C", 12)];
    let mut sectors = Vec::new();
    let mut gamma = Vec::new();
    for (name, size) in sizes {
        for _ in 0..size {
            sectors.push(String::from(name));
            gamma.push(if name == "B" { 0.6 } else { 1.0 });
        }
    }
    let n = sectors.len();
    let beta = (0..n).map(|i| 0.8 + 0.4 * i as f64 / (n - 1) as f64).collect();
    SynthConfig {
        market: "SYN".into(),
        start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        n_days: 1,
        sectors,
        market_loadings: beta,
        sector_loadings: gamma,
        regimes: alloc::vec![],
        seed,
        heavy_tail_df: None,
    }
}

/// Pre-shock structure, market-dominated shock, partial de-synchronization,
/// re-synchronization and stabilized structure, with the scripted
/// boundaries. `base` supplies the assets, loadings, dates and seed; its
/// regimes are replaced.
pub fn three_phase_scenario(base: &SynthConfig) -> Result<Scenario> {
    three_phase_scenario_with(base, &ThreePhaseLayout::default())
}

pub fn three_phase_scenario_with(base: &SynthConfig, layout: &ThreePhaseLayout) -> Result<Scenario> {
    if layout.shock.days.is_multiple_of(2) {
        return Err(Error::Config(
            "shock regime length must be odd to centre the event".into(),
        ));
    }
    let parts = [
        ("pre", &layout.pre),
        ("shock", &layout.shock),
        ("false_recovery", &layout.false_recovery),
        ("resync", &layout.resync),
        ("stabilized", &layout.stabilized),
    ];
    if let Some((name, _)) = parts.iter().find(|(_, l)| l.days == 0) {
        return Err(Error::Config(alloc::format!("regime {name} has zero length")));
    }
    let mut regimes = Vec::new();
    let mut day = 1;
    for (name, levels) in parts {
        regimes.push(levels.regime(name, day));
        day += levels.days;
    }
    let mut config = base.clone();
    config.n_days = day - 1;
    config.regimes = regimes;
    let panel = generate_factor_panel(&config)?;

    let dates = config.dates();
    let span = |r: &Regime| DateInterval::new(dates[r.start_day], dates[r.end_day]);
    let r = &config.regimes;
    let shock = span(&r[1])?;
    let event_day = r[1].start_day + layout.shock.days / 2;
    let lag = 2;
    let truth = ScenarioTruth {
        event_date: dates[event_day],
        regimes: r
            .iter()
            .map(|g| RegimeSpan {
                name: g.name.clone(),
                start: dates[g.start_day],
                end: dates[g.end_day],
            })
            .collect(),
        pre: span(&r[0])?,
        shock,
        false_recovery: DateInterval::new(dates[r[2].start_day], dates[r[3].end_day])?,
        stabilized: span(&r[4])?,
        ordinal_lag: lag,
        entropy_sustained_start: dates[(r[4].start_day + lag).min(config.n_days)],
    };
    Ok(Scenario { config, panel, truth })
}

/// Calm/stress schedule covering days `first..=last`: regimes of `block`
/// days whose market volatility follows a slow cosine cycle of `period`
/// days, so the state at the end of a formation window persists into the
/// test window after it.
pub fn cyclical_regimes(
    first: usize,
    last: usize,
    block: usize,
    period: usize,
    calm: f64,
    stress: f64,
    phase: f64,
) -> Vec<Regime> {
    let mut out = Vec::new();
    let mut start = first;
    while start <= last {
        let end = (start + block.max(1) - 1).min(last);
        let mid = (start + end) as f64 / 2.0;
        let x = 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * (mid / period as f64 + phase));
        out.push(Regime {
            name: alloc::format!("cycle{start}"),
            start_day: start,
            end_day: end,
            market_vol: calm + (stress - calm) * x,
            sector_vol: 0.012,
            idio_vol: 0.01,
            sector_vol_override: BTreeMap::new(),
        });
        start = end + 1;
    }
    out
}

/// Two-market panel for the portfolio study: 440 return days per market,
/// a five-day market shock centred on the returned event date halfway
/// through, and a slow volatility cycle elsewhere. Each market has 30
/// assets in three sectors.
pub fn two_market_risk_scenario(seed: u64) -> Result<(PricePanel, NaiveDate)> {
    let n_days = 440;
    let event_day = n_days / 2;
    let markets = [("MKA", 0.0), ("MKB", 0.08)];
    let mut panels = Vec::new();
    for (k, (label, phase)) in markets.iter().enumerate() {
        let mut base = default_scenario_base(splitmix64(seed ^ k as u64));
        base.market = String::from(*label);
        let n = 30;
        base.sectors = (0..n).map(|i| String::from(["A", "B", "C"][i % 3])).collect();
        base.market_loadings = (0..n).map(|i| 0.7 + 0.6 * i as f64 / (n - 1) as f64).collect();
        base.sector_loadings = (0..n).map(|i| [1.0, 0.7, 0.4][i % 3]).collect();
        base.n_days = n_days;
        let cycle = |a, b| cyclical_regimes(a, b, 10, 400, 0.002, 0.03, *phase);
        let mut regimes = cycle(1, event_day - 3);
        regimes.push(Regime {
            name: "shock".into(),
            start_day: event_day - 2,
            end_day: event_day + 2,
            market_vol: 0.06,
            sector_vol: 0.0,
            idio_vol: 0.01,
            sector_vol_override: BTreeMap::new(),
        });
        regimes.extend(cycle(event_day + 3, n_days));
        base.regimes = regimes;
        panels.push(generate_factor_panel(&base)?);
    }
    let event = panels[0].dates()[event_day];
    Ok((combine_panels(&panels)?, event))
}
