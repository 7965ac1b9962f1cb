//! Gap time series, shock-phase segmentation and monthly sector heatmaps.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{standardize_window, ReturnPanel, WindowSpec};
use crate::series::{DateInterval, DatedSeries};
use crate::spectral::{spectral_summary, NormMode, RhoMode, SpectralSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub window: usize,
    pub step: usize,
    pub rho_mode: RhoMode,
    pub norm_mode: NormMode,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            window: 60,
            step: 1,
            rho_mode: RhoMode::SignedMean,
            norm_mode: NormMode::Excess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWindow {
    pub end_date: NaiveDate,
    pub surviving_assets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub config: GapConfig,
    pub points: Vec<SpectralSummary>,
    /// Windows with fewer than two usable assets.
    pub skipped: Vec<SkippedWindow>,
}

impl GapSeries {
    /// Merge per-window results, in window order. Degenerate windows are
    /// recorded as skipped; any other error aborts.
    pub fn assemble<I>(config: GapConfig, results: I) -> Result<Self>
    where
        I: IntoIterator<Item = Result<SpectralSummary>>,
    {
        let mut points = Vec::new();
        let mut skipped = Vec::new();
        for r in results {
            match r {
                Ok(s) => points.push(s),
                Err(Error::DegenerateWindow { end_date, surviving }) => skipped.push(SkippedWindow {
                    end_date,
                    surviving_assets: surviving,
                }),
                Err(e) => return Err(e),
            }
        }
        Ok(Self {
            config,
            points,
            skipped,
        })
    }

    pub fn delta(&self) -> DatedSeries {
        self.project(|s| s.delta)
    }

    pub fn lambda_norm(&self) -> DatedSeries {
        self.project(|s| s.lambda_norm)
    }

    pub fn project(&self, f: impl Fn(&SpectralSummary) -> f64) -> DatedSeries {
        DatedSeries::new(
            self.points.iter().map(|p| p.end_date).collect(),
            self.points.iter().map(f).collect(),
        )
        .expect("window ends are strictly increasing")
    }
}

/// Spectral summary of a single window.
pub fn gap_point(returns: &ReturnPanel, window: WindowSpec, config: &GapConfig) -> Result<SpectralSummary> {
    let z = standardize_window(returns, window)?;
    spectral_summary(&z, config.rho_mode, config.norm_mode)
}

pub fn gap_series(returns: &ReturnPanel, config: &GapConfig) -> Result<GapSeries> {
    let windows = WindowSpec::rolling(returns.n_dates(), config.window, config.step)?;
    GapSeries::assemble(*config, windows.into_iter().map(|w| gap_point(returns, w, config)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    /// Shock window is the event day plus this many trading days either side.
    pub shock_halfwidth: usize,
    /// Restoration requires values strictly above this.
    pub threshold: f64,
    /// ... for this many consecutive trading days.
    pub sustain_days: usize,
    /// Defaults to everything before the shock window.
    pub pre_shock: Option<DateInterval>,
    /// Defaults to the first `sustain_days` of the sustained run.
    pub stabilized: Option<DateInterval>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            shock_halfwidth: 2,
            threshold: 1.0,
            sustain_days: 20,
            pre_shock: None,
            stabilized: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRule {
    FixedCalendar {
        pre_shock: DateInterval,
        shock: DateInterval,
        false_recovery: DateInterval,
        stabilized: DateInterval,
    },
    ThresholdBased(ThresholdParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseWarning {
    /// The series never stayed above the threshold long enough; the false
    /// recovery runs to the end of the series.
    SustainedThresholdNotMet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindows {
    pub event_date: NaiveDate,
    pub pre_shock: DateInterval,
    pub shock: DateInterval,
    /// Empty when restoration starts on the first post-shock day.
    pub false_recovery: Option<DateInterval>,
    pub stabilized: Option<DateInterval>,
    /// First day of the sustained above-threshold run (threshold rule only).
    pub sustained_start: Option<NaiveDate>,
    pub warning: Option<PhaseWarning>,
}

impl PhaseWindows {
    fn ordered(&self) -> Vec<(&'static str, DateInterval)> {
        let mut v = alloc::vec![("pre_shock", self.pre_shock), ("shock", self.shock)];
        if let Some(i) = self.false_recovery {
            v.push(("false_recovery", i));
        }
        if let Some(i) = self.stabilized {
            v.push(("stabilized", i));
        }
        v
    }

    fn validate(&self) -> Result<()> {
        if !self.shock.contains(self.event_date) {
            return Err(Error::Config(alloc::format!(
                "shock window {}..{} does not contain the event date {}",
                self.shock.start,
                self.shock.end,
                self.event_date
            )));
        }
        for pair in self.ordered().windows(2) {
            let ((a, x), (b, y)) = (pair[0], pair[1]);
            if x.end >= y.start {
                return Err(Error::Config(alloc::format!(
                    "phase {a} ({}..{}) must end before {b} ({}..{}) starts",
                    x.start,
                    x.end,
                    y.start,
                    y.end
                )));
            }
        }
        Ok(())
    }
}

/// Split a dated series into pre-shock, shock, false-recovery and
/// stabilized windows around `event_date`.
///
/// Under the threshold rule the false recovery runs from the first trading
/// day after the shock window up to the day before the series first stays
/// strictly above `threshold` for `sustain_days` consecutive days.
pub fn phase_segmentation(series: &DatedSeries, event_date: NaiveDate, rule: &PhaseRule) -> Result<PhaseWindows> {
    let dates = series.dates();
    if dates.is_empty() || event_date < dates[0] || event_date > dates[dates.len() - 1] {
        return Err(match (dates.first(), dates.last()) {
            (Some(&first), Some(&last)) => Error::DateOutOfRange {
                date: event_date,
                first,
                last,
            },
            _ => Error::TooFewObservations { needed: 1, got: 0 },
        });
    }
    let phases = match *rule {
        PhaseRule::FixedCalendar {
            pre_shock,
            shock,
            false_recovery,
            stabilized,
        } => PhaseWindows {
            event_date,
            pre_shock,
            shock,
            false_recovery: Some(false_recovery),
            stabilized: Some(stabilized),
            sustained_start: None,
            warning: None,
        },
        PhaseRule::ThresholdBased(p) => threshold_phases(series, event_date, &p)?,
    };
    phases.validate()?;
    Ok(phases)
}

fn threshold_phases(series: &DatedSeries, event_date: NaiveDate, p: &ThresholdParams) -> Result<PhaseWindows> {
    if p.sustain_days == 0 {
        return Err(Error::Config("sustain_days must be >= 1".into()));
    }
    let dates = series.dates();
    let values = series.values();
    let n = dates.len();
    let e = series
        .index_on_or_after(event_date)
        .expect("event date checked against series range");
    let k = p.shock_halfwidth;
    if e < k + 1 || e + k >= n {
        return Err(Error::Config(alloc::format!(
            "series must extend at least {} trading days before and {k} after the event",
            k + 1
        )));
    }
    let shock = DateInterval::new(dates[e - k], dates[e + k])?;
    let pre_shock = match p.pre_shock {
        Some(i) => i,
        None => DateInterval::new(dates[0], dates[e - k - 1])?,
    };
    let after = e + k + 1;
    let sustained = first_sustained_run(&values[after.min(n)..], p.threshold, p.sustain_days).map(|s| s + after);
    let (false_recovery, stabilized, warning) = match sustained {
        Some(s) => (
            (s > after)
                .then(|| DateInterval::new(dates[after], dates[s - 1]))
                .transpose()?,
            match p.stabilized {
                Some(i) => Some(i),
                None => Some(DateInterval::new(dates[s], dates[s + p.sustain_days - 1])?),
            },
            None,
        ),
        None => (
            (after < n)
                .then(|| DateInterval::new(dates[after], dates[n - 1]))
                .transpose()?,
            p.stabilized,
            Some(PhaseWarning::SustainedThresholdNotMet),
        ),
    };
    Ok(PhaseWindows {
        event_date: dates[e],
        pre_shock,
        shock,
        false_recovery,
        stabilized,
        sustained_start: sustained.map(|s| dates[s]),
        warning,
    })
}

/// Start of the first run of at least `len` values strictly above `threshold`.
fn first_sustained_run(values: &[f64], threshold: f64, len: usize) -> Option<usize> {
    let mut run = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > threshold {
            run += 1;
            if run == len {
                return Some(i + 1 - len);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Serialized as `"YYYY-MM"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(d: NaiveDate) -> Self {
        Self {
            year: d.year(),
            month: d.month(),
        }
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Every month from `first` to `last` inclusive.
    pub fn span(first: YearMonth, last: YearMonth) -> Vec<YearMonth> {
        let mut out = Vec::new();
        let mut m = first;
        while m <= last {
            out.push(m);
            m = m.next();
        }
        out
    }
}

impl From<YearMonth> for String {
    fn from(m: YearMonth) -> String {
        alloc::format!("{m}")
    }
}

impl TryFrom<String> for YearMonth {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let bad = || Error::Config(alloc::format!("expected YYYY-MM, got '{s}'"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        if y.len() != 4 || m.len() != 2 || !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(Self { year, month })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub sector: String,
    pub month: YearMonth,
    pub mean_lambda_norm: f64,
    pub window_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub sectors: Vec<String>,
    /// Every calendar month spanned by the return panel.
    pub months: Vec<YearMonth>,
    /// Present only where at least one window ends in the month; ordered by
    /// (sector, month).
    pub cells: Vec<HeatmapCell>,
    /// Per sector, windows left out for having fewer than two usable tickers.
    pub omitted_windows: BTreeMap<String, usize>,
}

impl HeatmapGrid {
    pub fn cell(&self, sector: &str, month: YearMonth) -> Option<&HeatmapCell> {
        self.cells.iter().find(|c| c.sector == sector && c.month == month)
    }

    /// Build the grid from per-sector gap series (sector order is kept).
    pub fn from_sector_series(months: Vec<YearMonth>, series: Vec<(String, GapSeries)>) -> Self {
        let mut cells = Vec::new();
        let mut omitted_windows = BTreeMap::new();
        let mut sectors = Vec::new();
        for (sector, s) in series {
            let mut buckets: BTreeMap<YearMonth, (f64, usize)> = BTreeMap::new();
            for p in &s.points {
                let b = buckets.entry(YearMonth::of(p.end_date)).or_insert((0.0, 0));
                b.0 += p.lambda_norm;
                b.1 += 1;
            }
            for (month, (sum, count)) in buckets {
                cells.push(HeatmapCell {
                    sector: sector.clone(),
                    month,
                    mean_lambda_norm: sum / count as f64,
                    window_count: count,
                });
            }
            omitted_windows.insert(sector.clone(), s.skipped.len());
            sectors.push(sector);
        }
        Self {
            sectors,
            months,
            cells,
            omitted_windows,
        }
    }
}

/// Calendar months covered by a return panel.
pub fn panel_months(returns: &ReturnPanel) -> Vec<YearMonth> {
    match (returns.dates().first(), returns.dates().last()) {
        (Some(&a), Some(&b)) => YearMonth::span(YearMonth::of(a), YearMonth::of(b)),
        _ => Vec::new(),
    }
}

/// Columns of each sector, in sorted sector order. Every sector needs at
/// least two tickers.
pub fn sector_columns(returns: &ReturnPanel) -> Result<Vec<(String, Vec<usize>)>> {
    returns
        .sectors()
        .into_iter()
        .map(|s| {
            let cols = returns.sector_columns(&s);
            if cols.len() < 2 {
                Err(Error::Config(alloc::format!("sector {s} has fewer than 2 tickers")))
            } else {
                Ok((s, cols))
            }
        })
        .collect()
}

/// Monthly mean of the intra-sector normalized largest eigenvalue.
pub fn monthly_sector_heatmap(returns: &ReturnPanel, config: &GapConfig) -> Result<HeatmapGrid> {
    let mut series = Vec::new();
    for (sector, cols) in sector_columns(returns)? {
        series.push((sector, gap_series(&returns.select_columns(&cols), config)?));
    }
    Ok(HeatmapGrid::from_sector_series(panel_months(returns), series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn day(k: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 3, 3).unwrap() + chrono::Duration::days(k)
    }

    fn series(values: Vec<f64>) -> DatedSeries {
        DatedSeries::new((0..values.len() as i64).map(day).collect(), values).unwrap()
    }

    fn params(m: usize) -> PhaseRule {
        PhaseRule::ThresholdBased(ThresholdParams {
            sustain_days: m,
            ..Default::default()
        })
    }

    #[test]
    fn jump_above_threshold_ends_false_recovery_the_day_before() {
        // event at 10, shock 8..=12, dips until 19, above from 20 on
        let mut v = vec![1.5; 40];
        for x in &mut v[8..20] {
            *x = 0.5;
        }
        let p = phase_segmentation(&series(v), day(10), &params(5)).unwrap();
        assert_eq!(p.shock, DateInterval::new(day(8), day(12)).unwrap());
        assert_eq!(p.pre_shock, DateInterval::new(day(0), day(7)).unwrap());
        assert_eq!(p.false_recovery, Some(DateInterval::new(day(13), day(19)).unwrap()));
        assert_eq!(p.sustained_start, Some(day(20)));
        assert_eq!(p.stabilized, Some(DateInterval::new(day(20), day(24)).unwrap()));
        assert_eq!(p.warning, None);
    }

    #[test]
    fn ties_at_threshold_do_not_count() {
        let mut v = vec![1.5; 30];
        for x in &mut v[8..15] {
            *x = 1.0;
        }
        let p = phase_segmentation(&series(v), day(10), &params(3)).unwrap();
        assert_eq!(p.sustained_start, Some(day(15)));
    }

    #[test]
    fn never_sustained_sets_warning_and_open_end() {
        let mut v = vec![0.8; 30];
        v[20] = 1.4;
        let p = phase_segmentation(&series(v), day(10), &params(3)).unwrap();
        assert_eq!(p.warning, Some(PhaseWarning::SustainedThresholdNotMet));
        assert_eq!(p.false_recovery, Some(DateInterval::new(day(13), day(29)).unwrap()));
        assert_eq!(p.stabilized, None);
    }

    #[test]
    fn immediate_restoration_leaves_no_false_recovery() {
        let v = vec![1.5; 30];
        let p = phase_segmentation(&series(v), day(10), &params(3)).unwrap();
        assert_eq!(p.false_recovery, None);
        assert_eq!(p.sustained_start, Some(day(13)));
    }

    #[test]
    fn event_outside_or_too_close_to_edges() {
        let s = series(vec![1.0; 20]);
        assert!(matches!(
            phase_segmentation(&s, day(40), &params(3)),
            Err(Error::DateOutOfRange { .. })
        ));
        assert!(phase_segmentation(&s, day(1), &params(3)).is_err());
        assert!(phase_segmentation(&s, day(18), &params(3)).is_err());
    }

    #[test]
    fn fixed_calendar_is_validated_and_idempotent() {
        let iv = |a, b| DateInterval::new(day(a), day(b)).unwrap();
        let rule = PhaseRule::FixedCalendar {
            pre_shock: iv(0, 5),
            shock: iv(8, 12),
            false_recovery: iv(13, 20),
            stabilized: iv(25, 29),
        };
        let s = series(vec![1.0; 30]);
        let a = phase_segmentation(&s, day(10), &rule).unwrap();
        assert_eq!(a, phase_segmentation(&s, day(10), &rule).unwrap());
        assert!(phase_segmentation(&s, day(14), &rule).is_err());
        let overlapping = PhaseRule::FixedCalendar {
            pre_shock: iv(0, 9),
            shock: iv(8, 12),
            false_recovery: iv(13, 20),
            stabilized: iv(25, 29),
        };
        assert!(phase_segmentation(&s, day(10), &overlapping).is_err());
    }

    #[test]
    fn year_month_span_and_format() {
        let a = YearMonth { year: 2024, month: 11 };
        let b = YearMonth { year: 2025, month: 2 };
        let span = YearMonth::span(a, b);
        assert_eq!(span.len(), 4);
        assert_eq!(alloc::format!("{}", span[2]), "2025-01");
        assert_eq!(YearMonth::try_from(String::from(span[2])), Ok(span[2]));
        assert!(YearMonth::try_from(String::from("2025-13")).is_err());
        assert!(YearMonth::try_from(String::from("2025-1")).is_err());
    }
}
