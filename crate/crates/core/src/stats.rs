//! Scalar statistics shared by the analysis modules.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with denominator `n` (population convention).
pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Variance with denominator `n - 1`. `None` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    sample_variance(xs).map(libm::sqrt)
}

/// Percentile by linear interpolation between closest ranks: position
/// `(n - 1) * q / 100` in the sorted sample.
pub fn percentile_linear(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Regularized incomplete beta function I_x(a, b) by continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

// Modified Lentz evaluation.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Unadjusted R^2 of an OLS fit of `y` on an intercept plus `regressors`.
///
/// Rank-deficient designs are solved with the minimum-norm solution, so a
/// constant regressor simply contributes nothing.
pub fn ols_r_squared(y: &[f64], regressors: &[&[f64]]) -> Result<f64> {
    let n = y.len();
    if n < regressors.len() + 2 {
        return Err(Error::TooFewObservations {
            needed: regressors.len() + 2,
            got: n,
        });
    }
    for r in regressors {
        if r.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: r.len(),
            });
        }
    }
    let my = mean(y);
    let sst: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    if regressors.is_empty() {
        return Ok(0.0);
    }
    let k = regressors.len();
    let centered: Vec<Vec<f64>> = regressors
        .iter()
        .map(|r| {
            let m = mean(r);
            r.iter().map(|v| v - m).collect()
        })
        .collect();
    let xtx = DMatrix::from_fn(k, k, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum()
    });
    let xty = DVector::from_fn(k, |i, _| centered[i].iter().zip(y).map(|(a, b)| a * (b - my)).sum());
    let (pinv, _) = linalg::symmetric_pseudo_inverse(&xtx, 1e-12)?;
    let beta = pinv * xty;
    let ssr: f64 = (0..n)
        .map(|t| {
            let fit: f64 = (0..k).map(|i| beta[i] * centered[i][t]).sum();
            let e = y[t] - my - fit;
            e * e
        })
        .sum();
    Ok(1.0 - ssr / sst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_endpoints_and_midpoint() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(percentile_linear(&xs, 0.0), Some(1.0));
        assert_eq!(percentile_linear(&xs, 100.0), Some(4.0));
        assert_eq!(percentile_linear(&xs, 50.0), Some(2.5));
        assert_eq!(percentile_linear(&[], 50.0), None);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn t_p_values_match_reference() {
        // Reference values from scipy.stats.t.sf(|t|, df) * 2.
        assert!((student_t_two_sided(2.0, 10.0) - 0.073_388_034_770_740_7).abs() < 1e-12);
        assert!((student_t_two_sided(0.0, 5.0) - 1.0).abs() < 1e-14);
        assert!((student_t_two_sided(-3.5, 40.0) - 0.001_157_706_614_757_469).abs() < 1e-12);
        assert!(student_t_two_sided(25.0, 1000.0) < 1e-90);
    }

    #[test]
    fn ols_exact_fit_and_no_signal() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((ols_r_squared(&y, &[&x]).unwrap() - 1.0).abs() < 1e-12);
        let c = [1.0; 20];
        assert!(ols_r_squared(&y, &[&c]).unwrap().abs() < 1e-12);
    }
}
