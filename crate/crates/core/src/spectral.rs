//! Correlation spectra and the complexity gap.
//!
//! For a correlation matrix `C` of `N` assets the normalized largest
//! eigenvalue is `(lambda_0 - 1) / (N - 1)` and the average pairwise
//! correlation is the mean of the off-diagonal entries. Because
//! `lambda_0 >= 1'C1 / N = 1 + (N - 1) rho`, the signed gap
//! `lambda_norm - rho` is never negative; it vanishes exactly when the
//! uniform vector is a leading eigenvector (an effectively one-factor
//! market) and grows with the heterogeneity of the market mode.

use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::StandardizedWindow;

/// Slack allowed on the correlation-matrix invariants.
pub const CORRELATION_TOL: f64 = 1e-10;
/// Negative eigenvalues above this are rounding noise and are clamped to 0.
pub const NEGATIVE_EIGEN_CLAMP: f64 = -1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
    tickers: Vec<String>,
}

impl CorrelationMatrix {
    /// Wrap an existing matrix after checking symmetry, unit diagonal and
    /// the `[-1, 1]` range (all within [`CORRELATION_TOL`]). The matrix is
    /// symmetrized and its diagonal set to exactly one.
    pub fn from_matrix(mut matrix: DMatrix<f64>, tickers: Vec<String>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || tickers.len() != n {
            return Err(Error::Shape(alloc::format!(
                "{}x{} matrix with {} tickers",
                n,
                matrix.ncols(),
                tickers.len()
            )));
        }
        for i in 0..n {
            if libm::fabs(matrix[(i, i)] - 1.0) > CORRELATION_TOL {
                return Err(Error::Shape(alloc::format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = matrix[(i, j)];
                if !v.is_finite() || libm::fabs(v) > 1.0 + CORRELATION_TOL {
                    return Err(Error::Shape(alloc::format!("entry ({i},{j}) = {v} out of range")));
                }
                if libm::fabs(v - matrix[(j, i)]) > CORRELATION_TOL {
                    return Err(Error::Shape(alloc::format!("asymmetric at ({i},{j})")));
                }
            }
        }
        linalg::symmetrize(&mut matrix);
        for i in 0..n {
            matrix[(i, i)] = 1.0;
        }
        Ok(Self { matrix, tickers })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        self.off_diagonal_mean(|v| v)
    }

    /// Mean of the absolute off-diagonal entries.
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        self.off_diagonal_mean(libm::fabs)
    }

    fn off_diagonal_mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    acc += f(self.matrix[(i, j)]);
                }
            }
        }
        acc / (n * (n - 1)) as f64
    }
}

/// Population equicorrelation matrix: ones on the diagonal, `c` elsewhere.
pub fn equicorrelation_matrix(n: usize, c: f64) -> CorrelationMatrix {
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { c });
    let tickers = (0..n).map(|i| alloc::format!("A{i}")).collect();
    CorrelationMatrix { matrix: m, tickers }
}

/// `C_ij = (1/T) sum_t z_i(t) z_j(t)`, symmetrized, unit diagonal.
pub fn correlation_matrix(window: &StandardizedWindow) -> CorrelationMatrix {
    let t = window.n_obs() as f64;
    let mut m = (&window.data * window.data.transpose()) / t;
    linalg::symmetrize(&mut m);
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if i == j { 1.0 } else { m[(i, j)].clamp(-1.0, 1.0) };
        }
    }
    CorrelationMatrix {
        matrix: m,
        tickers: window.tickers.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    /// Descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl EigenSpectrum {
    pub fn largest(&self) -> f64 {
        self.values[0]
    }

    /// `V diag(lambda) V^T`.
    pub fn recompose(&self) -> DMatrix<f64> {
        let n = self.values.len();
        let scaled = DMatrix::from_fn(n, n, |i, k| self.vectors[(i, k)] * self.values[k]);
        scaled * self.vectors.transpose()
    }
}

fn clamp_small_negatives(values: &mut [f64]) {
    for v in values.iter_mut() {
        if *v < 0.0 && *v > NEGATIVE_EIGEN_CLAMP {
            *v = 0.0;
        }
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending.
pub fn eigen_spectrum(c: &CorrelationMatrix) -> Result<EigenSpectrum> {
    let (mut values, vectors) = linalg::symmetric_eigen_desc(&c.matrix)?;
    clamp_small_negatives(&mut values);
    Ok(EigenSpectrum { values, vectors })
}

/// Marchenko-Pastur support for a random correlation matrix with aspect
/// ratio `Q = T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpBounds {
    pub lower: f64,
    pub upper: f64,
    pub q: f64,
}

pub fn mp_bounds(t_obs: usize, n_assets: usize) -> Result<MpBounds> {
    if t_obs < 1 || n_assets < 2 {
        return Err(Error::Config(alloc::format!(
            "Marchenko-Pastur bounds need T >= 1 and N >= 2 (got T = {t_obs}, N = {n_assets})"
        )));
    }
    let q = t_obs as f64 / n_assets as f64;
    let r = libm::sqrt(1.0 / q);
    Ok(MpBounds {
        lower: (1.0 - r) * (1.0 - r),
        upper: (1.0 + r) * (1.0 + r),
        q,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    #[default]
    SignedMean,
    AbsoluteMean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `(lambda_0 - 1) / (N - 1)`
    #[default]
    Excess,
    /// `lambda_0 / N`; diagnostic only.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub end_date: NaiveDate,
    pub n_assets: usize,
    pub n_obs: usize,
    pub lambda_max: f64,
    pub lambda_norm: f64,
    pub rho_signed: f64,
    pub rho_abs: f64,
    /// `lambda_norm - rho` with `rho` chosen by `rho_mode`.
    pub delta: f64,
    pub rho_mode: RhoMode,
    pub norm_mode: NormMode,
    pub mp: MpBounds,
    pub n_above_mp: usize,
}

impl SpectralSummary {
    /// The gap against the signed mean correlation, whatever `rho_mode` is.
    pub fn delta_signed(&self) -> f64 {
        self.lambda_norm - self.rho_signed
    }
}

pub fn normalized_largest(lambda_max: f64, n: usize, mode: NormMode) -> f64 {
    match mode {
        NormMode::Excess => (lambda_max - 1.0) / (n as f64 - 1.0),
        NormMode::Plain => lambda_max / n as f64,
    }
}

/// Summary statistics of a correlation matrix estimated from `t_obs`
/// observations.
pub fn summarize_correlation(
    c: &CorrelationMatrix,
    t_obs: usize,
    end_date: NaiveDate,
    rho_mode: RhoMode,
    norm_mode: NormMode,
) -> Result<SpectralSummary> {
    let n = c.n();
    if n < 2 {
        return Err(Error::DegenerateWindow { end_date, surviving: n });
    }
    let mut values = linalg::symmetric_eigenvalues_desc(&c.matrix)?;
    clamp_small_negatives(&mut values);
    let lambda_max = values[0];
    let mp = mp_bounds(t_obs, n)?;
    let rho_signed = c.mean_off_diagonal();
    let rho_abs = c.mean_abs_off_diagonal();
    let lambda_norm = normalized_largest(lambda_max, n, norm_mode);
    let rho = match rho_mode {
        RhoMode::SignedMean => rho_signed,
        RhoMode::AbsoluteMean => rho_abs,
    };
    Ok(SpectralSummary {
        end_date,
        n_assets: n,
        n_obs: t_obs,
        lambda_max,
        lambda_norm,
        rho_signed,
        rho_abs,
        delta: lambda_norm - rho,
        rho_mode,
        norm_mode,
        mp,
        n_above_mp: values.iter().filter(|&&v| v > mp.upper).count(),
    })
}

pub fn spectral_summary(
    window: &StandardizedWindow,
    rho_mode: RhoMode,
    norm_mode: NormMode,
) -> Result<SpectralSummary> {
    let c = correlation_matrix(window);
    summarize_correlation(&c, window.n_obs(), window.end_date, rho_mode, norm_mode)
}
