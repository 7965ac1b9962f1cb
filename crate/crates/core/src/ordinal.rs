//! Cross-sectional ordinal patterns of three consecutive returns.
//!
//! On a date `t` every stock with returns at `t-2`, `t-1` and `t`
//! contributes one of the six orderings of those three values. The Shannon
//! entropy (nats) of the pattern frequencies across stocks measures how
//! diverse short-term directional behaviour is: `ln 6` when every ordering
//! is equally common, zero when all stocks move in lockstep.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ReturnPanel, WindowSpec};
use crate::regimes::PhaseWindows;
use crate::series::{DateInterval, DatedSeries};
use crate::stats;

pub const N_PATTERNS: usize = 6;

/// Index into the lexicographically ordered permutations of `{0, 1, 2}`:
/// `0 -> (0,1,2)`, `1 -> (0,2,1)`, `2 -> (1,0,2)`, `3 -> (1,2,0)`,
/// `4 -> (2,0,1)`, `5 -> (2,1,0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrdinalPattern(u8);

const PERMUTATIONS: [[u8; 3]; N_PATTERNS] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl OrdinalPattern {
    pub fn from_index(index: u8) -> Option<Self> {
        ((index as usize) < N_PATTERNS).then_some(Self(index))
    }

    /// Pattern for a permutation of `{0, 1, 2}` (Lehmer code).
    pub fn from_permutation(perm: [u8; 3]) -> Option<Self> {
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || core::mem::replace(&mut seen[p as usize], true) {
                return None;
            }
        }
        let first = perm[0];
        let second_rank = if perm[1] > perm[2] { 1 } else { 0 };
        Some(Self(first * 2 + second_rank))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn permutation(self) -> [u8; 3] {
        PERMUTATIONS[self.0 as usize]
    }
}

/// The permutation of positions that sorts `(x0, x1, x2)` ascending; equal
/// values keep their time order.
pub fn ordinal_pattern(x0: f64, x1: f64, x2: f64) -> Result<OrdinalPattern> {
    let xs = [x0, x1, x2];
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ordinal pattern input"));
    }
    let mut perm = [0u8, 1, 2];
    // stable insertion sort on three elements
    for i in 1..3 {
        let mut j = i;
        while j > 0 && xs[perm[j - 1] as usize] > xs[perm[j] as usize] {
            perm.swap(j - 1, j);
            j -= 1;
        }
    }
    Ok(OrdinalPattern::from_permutation(perm).expect("sorted positions form a permutation"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalDistribution {
    pub date: NaiveDate,
    pub counts: [usize; N_PATTERNS],
    pub probabilities: [f64; N_PATTERNS],
    pub n_stocks: usize,
    /// Stocks without three complete returns ending at `date`.
    pub n_excluded: usize,
}

impl OrdinalDistribution {
    pub fn from_counts(date: NaiveDate, counts: [usize; N_PATTERNS], n_excluded: usize) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::DegenerateDate { date });
        }
        let mut probabilities = [0.0; N_PATTERNS];
        for (p, &c) in probabilities.iter_mut().zip(&counts) {
            *p = c as f64 / n as f64;
        }
        Ok(Self {
            date,
            counts,
            probabilities,
            n_stocks: n,
            n_excluded,
        })
    }
}

/// Distribution of patterns across stocks for the three returns ending at
/// return row `row`.
pub fn cross_section_distribution(returns: &ReturnPanel, row: usize) -> Result<OrdinalDistribution> {
    if row < 2 || row >= returns.n_dates() {
        return Err(Error::WindowOutOfRange {
            start: row.saturating_sub(2),
            end: row + 1,
            len: returns.n_dates(),
        });
    }
    let mut counts = [0usize; N_PATTERNS];
    let mut excluded = 0;
    for i in 0..returns.n_assets() {
        match (returns.get(row - 2, i), returns.get(row - 1, i), returns.get(row, i)) {
            (Some(a), Some(b), Some(c)) => counts[ordinal_pattern(a, b, c)?.index() as usize] += 1,
            _ => excluded += 1,
        }
    }
    OrdinalDistribution::from_counts(returns.dates()[row], counts, excluded)
}

/// `-sum p ln p` over non-zero probabilities, in nats.
pub fn ordinal_entropy(dist: &OrdinalDistribution) -> f64 {
    shannon_entropy(&dist.probabilities)
}

pub fn shannon_entropy(probabilities: &[f64]) -> f64 {
    let h: f64 = probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * libm::log(p))
        .sum();
    // a single certain pattern gives -0.0 otherwise
    h + 0.0
}

/// Only embedding dimension 3 with unit delay is supported.
pub fn check_embedding(dimension: usize, delay: usize) -> Result<()> {
    if dimension != 3 || delay != 1 {
        return Err(Error::Config(alloc::format!(
            "ordinal entropy supports embedding dimension 3 with delay 1 only (got dimension {dimension}, delay {delay})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub date: NaiveDate,
    pub entropy: f64,
    pub distribution: OrdinalDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySeries {
    pub window: usize,
    pub step: usize,
    pub points: Vec<EntropyPoint>,
    /// Window ends where no stock had three complete returns.
    pub skipped: Vec<NaiveDate>,
}

impl EntropySeries {
    pub fn to_dated(&self) -> DatedSeries {
        DatedSeries::new(
            self.points.iter().map(|p| p.date).collect(),
            self.points.iter().map(|p| p.entropy).collect(),
        )
        .expect("window ends are strictly increasing")
    }
}

/// Entropy at the last day of every rolling window. The window only
/// positions the series; eligibility depends on the last three returns.
pub fn entropy_series(returns: &ReturnPanel, window: usize, step: usize) -> Result<EntropySeries> {
    let windows = WindowSpec::rolling(returns.n_dates(), window, step)?;
    let mut points = Vec::with_capacity(windows.len());
    let mut skipped = Vec::new();
    for w in windows {
        match cross_section_distribution(returns, w.last()) {
            Ok(distribution) => points.push(EntropyPoint {
                date: distribution.date,
                entropy: ordinal_entropy(&distribution),
                distribution,
            }),
            Err(Error::DegenerateDate { date }) => skipped.push(date),
            Err(e) => return Err(e),
        }
    }
    Ok(EntropySeries {
        window,
        step,
        points,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseStat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub sd: Option<f64>,
}

impl PhaseStat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            n: values.len(),
            mean: stats::mean(values),
            sd: stats::sample_sd(values),
        })
    }
}

/// Per-phase entropy statistics; a phase with no series values is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalPhaseStats {
    pub pre_shock: Option<PhaseStat>,
    pub shock: Option<PhaseStat>,
    pub false_recovery: Option<PhaseStat>,
    pub stabilized: Option<PhaseStat>,
    pub false_recovery_p95: Option<f64>,
    pub percentile_method: String,
}

pub fn phase_statistics(series: &DatedSeries, phases: &PhaseWindows) -> OrdinalPhaseStats {
    let vals = |i: Option<&DateInterval>| i.map(|i| series.values_in(i)).unwrap_or_default();
    let recovery = vals(phases.false_recovery.as_ref());
    OrdinalPhaseStats {
        pre_shock: PhaseStat::of(&vals(Some(&phases.pre_shock))),
        shock: PhaseStat::of(&vals(Some(&phases.shock))),
        false_recovery: PhaseStat::of(&recovery),
        stabilized: PhaseStat::of(&vals(phases.stabilized.as_ref())),
        false_recovery_p95: stats::percentile_linear(&recovery, 95.0),
        percentile_method: "linear".into(),
    }
}
