//! Rolling minimum-variance portfolio study: formation/test windows, Monte
//! Carlo stock subsets, MVP and equal-weight construction, and the
//! rank statistics relating the gap to realized risk.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{standardize_columns, zscore, ReturnPanel, WindowSpec};
use crate::spectral::{correlation_matrix, summarize_correlation, NormMode, RhoMode};
use crate::stats;

/// Relative eigenvalue cutoff for the covariance pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Sample covariance of raw returns with denominator `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    pub fn from_matrix(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Shape(alloc::format!(
                "covariance must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance entry"));
        }
        linalg::symmetrize(&mut m);
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// `q^T V q`.
    pub fn quadratic_form(&self, q: &[f64]) -> f64 {
        let v = DVector::from_column_slice(q);
        (v.transpose() * &self.0 * &v)[(0, 0)]
    }
}

/// Covariance of the given per-asset return series (all of equal length).
pub fn covariance_matrix(columns: &[Vec<f64>]) -> Result<CovarianceMatrix> {
    let n = columns.len();
    if n < 2 {
        return Err(Error::Shape(alloc::format!(
            "covariance needs at least 2 assets, got {n}"
        )));
    }
    let t = columns[0].len();
    if t == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    if let Some(c) = columns.iter().find(|c| c.len() != t) {
        return Err(Error::LengthMismatch {
            left: t,
            right: c.len(),
        });
    }
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let m = stats::mean(c);
            c.iter().map(|x| x - m).collect()
        })
        .collect();
    let m = DMatrix::from_fn(n, n, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / t as f64
    });
    CovarianceMatrix::from_matrix(m)
}

/// Fully invested weight vector; shorting allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("portfolio weight"));
        }
        Ok(Self(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `q = V^+ 1 / (1^T V^+ 1)`.
///
/// Degenerate when the ones vector is (numerically) orthogonal to the range
/// of `V`, which makes the denominator vanish.
pub fn mvp_weights(v: &CovarianceMatrix) -> Result<Weights> {
    let n = v.n();
    let (pinv, rank) = linalg::symmetric_pseudo_inverse(v.matrix(), PINV_RTOL)?;
    if rank == 0 {
        return Err(Error::DegeneratePortfolio);
    }
    let ones = DVector::from_element(n, 1.0);
    let projected = &pinv * (v.matrix() * &ones);
    if projected.norm_squared() <= PINV_RTOL * n as f64 {
        return Err(Error::DegeneratePortfolio);
    }
    let raw = &pinv * &ones;
    let denom = raw.sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::DegeneratePortfolio);
    }
    Weights::new(raw.iter().map(|x| x / denom).collect())
}

pub fn ew_weights(n: usize) -> Result<Weights> {
    if n == 0 {
        return Err(Error::Shape("equal weights need at least one asset".into()));
    }
    Weights::new(alloc::vec![1.0 / n as f64; n])
}

/// Annualized volatility in percent of the portfolio `q` over per-asset
/// return series, using the sample variance (denominator `h - 1`).
pub fn realized_volatility(q: &Weights, columns: &[Vec<f64>], annualization: f64) -> Result<f64> {
    if columns.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: q.len(),
            right: columns.len(),
        });
    }
    let h = columns.first().map_or(0, |c| c.len());
    if let Some(c) = columns.iter().find(|c| c.len() != h) {
        return Err(Error::LengthMismatch {
            left: h,
            right: c.len(),
        });
    }
    let port: Vec<f64> = (0..h)
        .map(|t| q.as_slice().iter().zip(columns).map(|(w, c)| w * c[t]).sum())
        .collect();
    let var = stats::sample_variance(&port).ok_or(Error::TooFewObservations { needed: 2, got: h })?;
    Ok(libm::sqrt(var.max(0.0)) * libm::sqrt(annualization) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Formation window length `T`.
    pub formation: usize,
    /// Test window length `h`.
    pub test: usize,
    pub n_stocks: usize,
    pub portfolios: usize,
    pub annualization: f64,
    /// Rows between successive formation starts.
    pub step: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            formation: 60,
            test: 20,
            n_stocks: 10,
            portfolios: 500,
            annualization: 252.0,
            step: 20,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.formation < 3 {
            return bad("formation window must be at least 3 days");
        }
        if self.test < 2 {
            return bad("test window must be at least 2 days");
        }
        if self.n_stocks < 2 {
            return bad("n_stocks must be at least 2");
        }
        if self.portfolios == 0 {
            return bad("portfolios must be at least 1");
        }
        if self.step == 0 {
            return bad("step must be at least 1");
        }
        if !(self.annualization > 0.0) || !self.annualization.is_finite() {
            return bad("annualization must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub index: usize,
    pub formation: WindowSpec,
    pub test: WindowSpec,
}

/// Formation/test pairs over `n_rows` return rows, first formation at row 0.
pub fn study_windows(n_rows: usize, config: &StudyConfig) -> Result<Vec<StudyWindow>> {
    config.validate()?;
    let span = config.formation + config.test;
    let mut out = Vec::new();
    let mut start = 0;
    while start + span <= n_rows {
        out.push(StudyWindow {
            index: out.len(),
            formation: WindowSpec {
                start,
                end: start + config.formation,
            },
            test: WindowSpec {
                start: start + config.formation,
                end: start + span,
            },
        });
        start += config.step;
    }
    Ok(out)
}

/// Columns complete over both windows and with non-zero formation variance.
pub fn eligible_columns(returns: &ReturnPanel, w: &StudyWindow) -> Vec<usize> {
    (0..returns.n_assets())
        .filter(|&c| {
            returns.complete_column(c, w.test).is_some()
                && returns
                    .complete_column(c, w.formation)
                    .is_some_and(|xs| zscore(&xs).is_some())
        })
        .collect()
}

/// Where an observation's random subset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub seed: u64,
    pub market_index: u64,
    pub window_index: u64,
    pub portfolio_index: u64,
    /// Seed of the ChaCha8 substream actually used.
    pub stream_seed: u64,
}

impl SeedLineage {
    pub fn derive(seed: u64, market_index: u64, window_index: u64, portfolio_index: u64) -> Self {
        let mut h = splitmix64(seed);
        h = splitmix64(h ^ market_index);
        h = splitmix64(h ^ window_index);
        h = splitmix64(h ^ portfolio_index);
        Self {
            seed,
            market_index,
            window_index,
            portfolio_index,
            stream_seed: h,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed)
    }
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioObservation {
    pub market: String,
    pub window_index: usize,
    /// Last date of the formation window.
    pub window_end: NaiveDate,
    pub test_end: NaiveDate,
    pub tickers: Vec<String>,
    pub delta: f64,
    /// Signed mean off-diagonal correlation.
    pub rho_bar: f64,
    pub lambda_max: f64,
    /// Equal-weight formation volatility, annualized %.
    pub sigma_hist: f64,
    pub sigma_mvp: f64,
    pub sigma_ew: f64,
    pub mvp_weights: Weights,
    pub ew_weights: Weights,
    pub lineage: SeedLineage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SkipKind {
    TooFewEligible { eligible: usize },
    DegeneratePortfolio { portfolio_index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySkip {
    pub window_index: usize,
    pub window_end: NaiveDate,
    #[serde(flatten)]
    pub kind: SkipKind,
}

/// Evaluate one random portfolio in one window. `eligible` must come from
/// [`eligible_columns`].
#[allow(clippy::too_many_arguments)]
pub fn study_portfolio(
    returns: &ReturnPanel,
    market: &str,
    market_index: u64,
    window: &StudyWindow,
    eligible: &[usize],
    portfolio_index: usize,
    config: &StudyConfig,
    seed: u64,
) -> Result<PortfolioObservation> {
    let lineage = SeedLineage::derive(seed, market_index, window.index as u64, portfolio_index as u64);
    let mut rng = lineage.rng();
    let mut picks = rand::seq::index::sample(&mut rng, eligible.len(), config.n_stocks).into_vec();
    picks.sort_unstable();
    let cols: Vec<usize> = picks.iter().map(|&i| eligible[i]).collect();

    let z = standardize_columns(returns, window.formation, &cols)?;
    if z.n_assets() != cols.len() {
        return Err(Error::Shape("ineligible column in portfolio subset".into()));
    }
    let c = correlation_matrix(&z);
    let s = summarize_correlation(&c, z.n_obs(), z.end_date, RhoMode::SignedMean, NormMode::Excess)?;

    let formation: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| returns.complete_column(c, window.formation).expect("eligible"))
        .collect();
    let test: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| returns.complete_column(c, window.test).expect("eligible"))
        .collect();
    let v = covariance_matrix(&formation)?;
    let q_mvp = mvp_weights(&v)?;
    let q_ew = ew_weights(cols.len())?;
    Ok(PortfolioObservation {
        market: market.into(),
        window_index: window.index,
        window_end: z.end_date,
        test_end: returns.dates()[window.test.last()],
        tickers: z.tickers,
        delta: s.delta,
        rho_bar: s.rho_signed,
        lambda_max: s.lambda_max,
        sigma_hist: realized_volatility(&q_ew, &formation, config.annualization)?,
        sigma_mvp: realized_volatility(&q_mvp, &test, config.annualization)?,
        sigma_ew: realized_volatility(&q_ew, &test, config.annualization)?,
        mvp_weights: q_mvp,
        ew_weights: q_ew,
        lineage,
    })
}

/// Result of one window: either too few eligible stocks, or one outcome per
/// portfolio in portfolio order.
pub enum WindowOutcome {
    TooFewEligible { eligible: usize },
    Portfolios(Vec<Result<PortfolioObservation>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioStudy {
    pub market: String,
    pub config: StudyConfig,
    pub seed: u64,
    pub n_windows: usize,
    pub observations: Vec<PortfolioObservation>,
    pub skips: Vec<StudySkip>,
    /// Subsets are drawn afresh in every window.
    pub sampling: String,
}

impl PortfolioStudy {
    /// Merge per-window outcomes given in window order. Degenerate MVPs
    /// become skips; any other error aborts.
    pub fn assemble(
        market: &str,
        config: StudyConfig,
        seed: u64,
        returns: &ReturnPanel,
        outcomes: Vec<(StudyWindow, WindowOutcome)>,
    ) -> Result<Self> {
        let mut observations = Vec::new();
        let mut skips = Vec::new();
        let n_windows = outcomes.len();
        for (w, outcome) in outcomes {
            let window_end = returns.dates()[w.formation.last()];
            match outcome {
                WindowOutcome::TooFewEligible { eligible } => skips.push(StudySkip {
                    window_index: w.index,
                    window_end,
                    kind: SkipKind::TooFewEligible { eligible },
                }),
                WindowOutcome::Portfolios(results) => {
                    for (p, r) in results.into_iter().enumerate() {
                        match r {
                            Ok(o) => observations.push(o),
                            Err(Error::DegeneratePortfolio) => skips.push(StudySkip {
                                window_index: w.index,
                                window_end,
                                kind: SkipKind::DegeneratePortfolio { portfolio_index: p },
                            }),
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        Ok(Self {
            market: market.into(),
            config,
            seed,
            n_windows,
            observations,
            skips,
            sampling: "resample_per_window".into(),
        })
    }
}

/// All portfolios of one window, sequentially.
pub fn study_window(
    returns: &ReturnPanel,
    market: &str,
    market_index: u64,
    window: &StudyWindow,
    config: &StudyConfig,
    seed: u64,
) -> WindowOutcome {
    let eligible = eligible_columns(returns, window);
    if eligible.len() < config.n_stocks {
        return WindowOutcome::TooFewEligible {
            eligible: eligible.len(),
        };
    }
    WindowOutcome::Portfolios(
        (0..config.portfolios)
            .map(|p| study_portfolio(returns, market, market_index, window, &eligible, p, config, seed))
            .collect(),
    )
}

/// Algorithm 1 on a single-market return panel.
pub fn run_portfolio_study(
    returns: &ReturnPanel,
    market: &str,
    market_index: u64,
    config: &StudyConfig,
    seed: u64,
) -> Result<PortfolioStudy> {
    let windows = study_windows(returns.n_dates(), config)?;
    if windows.is_empty() {
        return Err(Error::TooFewDates {
            needed: config.formation + config.test + 1,
            got: returns.n_dates() + 1,
        });
    }
    let outcomes = windows
        .into_iter()
        .map(|w| {
            let o = study_window(returns, market, market_index, &w, config, seed);
            (w, o)
        })
        .collect();
    PortfolioStudy::assemble(market, *config, seed, returns, outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman rank correlation with average ranks for ties and a two-sided
/// t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewObservations { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input"));
    }
    let rho = stats::pearson(&stats::average_ranks(x), &stats::average_ranks(y))
        .ok_or(Error::UndefinedCorrelation)?
        .clamp(-1.0, 1.0);
    let p_value = if libm::fabs(rho) >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * libm::sqrt(df / (1.0 - rho * rho));
        stats::student_t_two_sided(t, df)
    };
    Ok(SpearmanResult { rho, p_value, n })
}

/// Indices split into five groups by ascending `key`, ties broken by index.
/// The first `n % 5` groups get one extra member.
pub fn quintile_partition(key: &[f64]) -> [Vec<usize>; 5] {
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let base = key.len() / 5;
    let rem = key.len() % 5;
    let mut groups: [Vec<usize>; 5] = Default::default();
    let mut it = order.into_iter();
    for (g, group) in groups.iter_mut().enumerate() {
        let size = base + usize::from(g < rem);
        group.extend(it.by_ref().take(size));
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    /// Spearman of the benchmark against MVP test volatility.
    pub spearman: SpearmanResult,
    /// R^2 gained by adding the gap to an OLS on the benchmark.
    pub incremental_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileReport {
    pub market: String,
    pub n_observations: usize,
    pub spearman_mvp: SpearmanResult,
    pub spearman_ew: SpearmanResult,
    pub quintile_sizes: [usize; 5],
    /// Mean MVP test volatility per quintile, Q0 (lowest gap) first [% ann.].
    pub quintile_mean_mvp: [f64; 5],
    /// `mean(Q4) - mean(Q0)` [% ann.].
    pub spread: f64,
    pub rho_bar: BenchmarkStats,
    pub sigma_hist: BenchmarkStats,
    pub event_date: Option<NaiveDate>,
    /// Formation window ending strictly before the event.
    pub pre_event: Option<SpearmanResult>,
    /// Formation window ending on or after the event.
    pub post_event: Option<SpearmanResult>,
}

impl QuintileReport {
    pub fn is_strictly_decreasing(&self) -> bool {
        self.quintile_mean_mvp.windows(2).all(|w| w[0] > w[1])
    }
}

fn benchmark(bench: &[f64], delta: &[f64], sigma: &[f64]) -> Result<BenchmarkStats> {
    let spearman = spearman(bench, sigma)?;
    let full = stats::ols_r_squared(sigma, &[bench, delta])?;
    let base = stats::ols_r_squared(sigma, &[bench])?;
    Ok(BenchmarkStats {
        spearman,
        incremental_r2: full - base,
    })
}

/// Tables-2/3 statistics for one market's observations.
pub fn quintile_report(
    market: &str,
    observations: &[PortfolioObservation],
    event_date: Option<NaiveDate>,
) -> Result<QuintileReport> {
    let n = observations.len();
    if n < 5 {
        return Err(Error::TooFewObservations { needed: 5, got: n });
    }
    let col = |f: fn(&PortfolioObservation) -> f64| observations.iter().map(f).collect::<Vec<f64>>();
    let delta = col(|o| o.delta);
    let mvp = col(|o| o.sigma_mvp);
    let ew = col(|o| o.sigma_ew);
    let rho_bar = col(|o| o.rho_bar);
    let hist = col(|o| o.sigma_hist);

    let groups = quintile_partition(&delta);
    let mut quintile_sizes = [0; 5];
    let mut quintile_mean_mvp = [0.0; 5];
    for (g, idx) in groups.iter().enumerate() {
        quintile_sizes[g] = idx.len();
        quintile_mean_mvp[g] = idx.iter().map(|&i| mvp[i]).sum::<f64>() / idx.len() as f64;
    }

    let subperiod = |keep: &dyn Fn(&PortfolioObservation) -> bool| {
        let (d, s): (Vec<f64>, Vec<f64>) = observations
            .iter()
            .filter(|o| keep(o))
            .map(|o| (o.delta, o.sigma_mvp))
            .unzip();
        spearman(&d, &s).ok()
    };
    let (pre_event, post_event) = match event_date {
        Some(e) => (subperiod(&|o| o.window_end < e), subperiod(&|o| o.window_end >= e)),
        None => (None, None),
    };

    Ok(QuintileReport {
        market: market.into(),
        n_observations: n,
        spearman_mvp: spearman(&delta, &mvp)?,
        spearman_ew: spearman(&delta, &ew)?,
        quintile_sizes,
        quintile_mean_mvp,
        spread: quintile_mean_mvp[4] - quintile_mean_mvp[0],
        rho_bar: benchmark(&rho_bar, &delta, &mvp)?,
        sigma_hist: benchmark(&hist, &delta, &mvp)?,
        event_date,
        pre_event,
        post_event,
    })
}
