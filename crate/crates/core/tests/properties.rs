use std::collections::BTreeMap;

use chrono::NaiveDate;
use gapscope_core::ordinal::{cross_section_distribution, ordinal_entropy, shannon_entropy, N_PATTERNS};
use gapscope_core::panel::ReturnPanel;
use gapscope_core::portfolio::{
    covariance_matrix, ew_weights, mvp_weights, quintile_partition, spearman, CovarianceMatrix,
};
use gapscope_core::regimes::{phase_segmentation, PhaseRule, ThresholdParams};
use gapscope_core::series::DatedSeries;
use gapscope_core::spectral::{
    eigen_spectrum, equicorrelation_matrix, mp_bounds, summarize_correlation, CorrelationMatrix, NormMode, RhoMode,
};
use gapscope_core::stats::{average_ranks, ols_r_squared, pearson, percentile_linear};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 2).unwrap()
}

/// Correlation matrix from `N x K` loadings: normalized `A A^T`.
fn corr_from_loadings(n: usize, k: usize, a: &[f64]) -> CorrelationMatrix {
    let a = DMatrix::from_row_slice(n, k, a);
    let g = &a * a.transpose();
    let m = DMatrix::from_fn(n, n, |i, j| g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt());
    CorrelationMatrix::from_matrix(m, (0..n).map(|i| format!("A{i}")).collect()).unwrap()
}

fn loadings() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..12, 1usize..6).prop_flat_map(|(n, k)| {
        (
            Just(n),
            Just(n + k),
            prop::collection::vec(prop_oneof![-3.0..3.0f64, 0.1..3.0f64], n * (n + k)),
        )
    })
}

fn summary(c: &CorrelationMatrix, rho: RhoMode) -> gapscope_core::spectral::SpectralSummary {
    summarize_correlation(c, 60, day0(), rho, NormMode::Excess).unwrap()
}

/// Characteristic polynomial coefficients by Faddeev-LeVerrier:
/// `det(lambda I - A) = sum c[k] lambda^(n-k)`.
fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * c[k - 1];
        let ck = -(a * &m).trace() / k as f64;
        c.push(ck);
    }
    c
}

fn largest_root(c: &[f64], hi: f64) -> f64 {
    let p = |x: f64| c.iter().fold(0.0, |acc, ck| acc * x + ck);
    // walk down from an upper bound to the first sign change, then bisect
    let steps = 20_000;
    let mut b = hi;
    let sb = p(b).signum();
    let mut a = b;
    for s in 1..=steps {
        a = hi - hi * s as f64 / steps as f64;
        if p(a).signum() != sb || p(a) == 0.0 {
            break;
        }
        b = a;
    }
    let (mut lo, mut up) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + up);
        if p(mid).signum() == p(up).signum() {
            up = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + up)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rayleigh_bound_holds((n, k, a) in loadings()) {
        let c = corr_from_loadings(n, k, &a);
        let s = summary(&c, RhoMode::SignedMean);
        prop_assert!(s.delta >= -1e-10, "delta {}", s.delta);
    }

    #[test]
    fn trace_and_reconstruction((n, k, a) in loadings()) {
        let c = corr_from_loadings(n, k, &a);
        let e = eigen_spectrum(&c).unwrap();
        let trace: f64 = e.values.iter().sum();
        prop_assert!((trace - n as f64).abs() < 1e-9);
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let r = e.recompose();
        prop_assert!((r - c.matrix()).amax() < 1e-9);
    }

    #[test]
    fn permutation_invariance((n, k, a) in loadings(), seed in any::<u64>()) {
        let c = corr_from_loadings(n, k, &a);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = DMatrix::from_fn(n, n, |i, j| c.matrix()[(perm[i], perm[j])]);
        let cp = CorrelationMatrix::from_matrix(p, c.tickers().to_vec()).unwrap();
        let (x, y) = (summary(&c, RhoMode::SignedMean), summary(&cp, RhoMode::SignedMean));
        prop_assert!((x.lambda_max - y.lambda_max).abs() < 1e-9);
        prop_assert!((x.rho_signed - y.rho_signed).abs() < 1e-12);
    }

    #[test]
    fn equicorrelation_gap_vanishes(n in 2usize..40, u in 0.0..0.999f64) {
        // valid range is c in (-1/(N-1), 1)
        let lo = -1.0 / (n as f64 - 1.0);
        let c = lo + (1.0 - lo) * u;
        prop_assume!(c > lo + 1e-6);
        let s = summary(&equicorrelation_matrix(n, c), RhoMode::SignedMean);
        if c >= 0.0 {
            prop_assert!((s.lambda_norm - c).abs() < 1e-10);
            prop_assert!(s.delta.abs() < 1e-10);
        } else {
            // the market mode becomes the (N-1)-fold eigenvalue 1 - c
            prop_assert!(s.delta >= -1e-10);
        }
    }

    #[test]
    fn largest_eigenvalue_matches_characteristic_polynomial(n in 2usize..=4, k in 1usize..4, a in prop::collection::vec(-2.0..2.0f64, 28)) {
        let c = corr_from_loadings(n, k, &a[..n * k]);
        let poly = char_poly(c.matrix());
        let oracle = largest_root(&poly, n as f64 + 1e-9);
        let got = eigen_spectrum(&c).unwrap().largest();
        prop_assert!((oracle - got).abs() < 1e-8, "oracle {} got {}", oracle, got);
    }

    #[test]
    fn mp_identities(t in 1usize..500, n in 2usize..300) {
        let b = mp_bounds(t, n).unwrap();
        let q = t as f64 / n as f64;
        prop_assert!((b.upper + b.lower - 2.0 * (1.0 + 1.0 / q)).abs() < 1e-9 * (1.0 + 1.0 / q));
        prop_assert!((b.upper * b.lower - (1.0 - 1.0 / q).powi(2)).abs() < 1e-9 * (1.0 + 1.0 / q).powi(2));
        prop_assert!(b.lower <= b.upper);
    }

    #[test]
    fn entropy_bounds(counts in prop::array::uniform6(0usize..50)) {
        let n: usize = counts.iter().sum();
        prop_assume!(n > 0);
        let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let h = shannon_entropy(&p);
        prop_assert!(h >= 0.0 && h <= (N_PATTERNS as f64).ln() + 1e-12);
    }

    #[test]
    fn ordinal_invariance_and_counts(
        rets in prop::collection::vec(prop::option::weighted(0.85, -0.1..0.1f64), 3 * 12),
        scale in 0.1..10.0f64,
        shift in -1.0..1.0f64,
    ) {
        let n = 12;
        let dates: Vec<NaiveDate> = (0..3).map(|i| day0() + chrono::Duration::days(i)).collect();
        let tickers: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
        let lab: BTreeMap<String, String> = tickers.iter().map(|t| (t.clone(), "X".to_string())).collect();
        let panel = |v: Vec<Option<f64>>| ReturnPanel::new(dates.clone(), tickers.clone(), lab.clone(), lab.clone(), v).unwrap();
        let a = panel(rets.clone());
        // strictly increasing transform applied to every return
        let b = panel(rets.iter().map(|r| r.map(|x| (scale * x + shift).exp())).collect());
        match (cross_section_distribution(&a, 2), cross_section_distribution(&b, 2)) {
            (Ok(da), Ok(db)) => {
                prop_assert_eq!(da.counts, db.counts);
                prop_assert_eq!(ordinal_entropy(&da), ordinal_entropy(&db));
                prop_assert_eq!(da.n_stocks + da.n_excluded, n);
                let complete = (0..n).filter(|&i| (0..3).all(|t| rets[t * n + i].is_some())).count();
                prop_assert_eq!(da.counts.iter().sum::<usize>(), complete);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "eligibility must not depend on the transform"),
        }
    }

    #[test]
    fn spearman_rank_invariance(pairs in prop::collection::vec((-5i32..5, -5i32..5), 3..30)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let a = spearman(&x, &y);
        let tx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let ty: Vec<f64> = y.iter().map(|v| (v / 3.0).exp()).collect();
        let b = spearman(&tx, &ty);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.rho, b.rho);
                prop_assert!((-1.0..=1.0).contains(&a.rho));
                prop_assert!((0.0..=1.0).contains(&a.p_value));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false),
        }
    }

    #[test]
    fn mvp_in_sample_optimality(a in prop::collection::vec(-1.0..1.0f64, 6 * 9), trials in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 6), 50)) {
        let n = 6;
        let m = DMatrix::from_row_slice(n, 9, &a);
        let v = CovarianceMatrix::from_matrix(&m * m.transpose() * 1e-4 + DMatrix::identity(n, n) * 1e-6).unwrap();
        let q = mvp_weights(&v).unwrap();
        prop_assert!((q.sum() - 1.0).abs() < 1e-10);
        let best = v.quadratic_form(q.as_slice());
        let ew = ew_weights(n).unwrap();
        prop_assert!(best <= v.quadratic_form(ew.as_slice()) + 1e-12);
        for t in trials {
            let s: f64 = t.iter().sum();
            prop_assume!(s.abs() > 1e-3);
            let w: Vec<f64> = t.iter().map(|x| x / s).collect();
            prop_assert!(best <= v.quadratic_form(&w) + 1e-12);
        }
    }

    #[test]
    fn quintiles_cover_once(key in prop::collection::vec(prop_oneof![Just(0.0), -1.0..1.0f64], 5..200)) {
        let g = quintile_partition(&key);
        let sizes: Vec<usize> = g.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = g.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..key.len()).collect::<Vec<_>>());
        for w in g.windows(2) {
            let max_lo = w[0].iter().map(|&i| key[i]).fold(f64::MIN, f64::max);
            let min_hi = w[1].iter().map(|&i| key[i]).fold(f64::MAX, f64::min);
            prop_assert!(max_lo <= min_hi);
        }
    }

    #[test]
    fn incremental_r2_nonnegative(rows in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 5..60)) {
        let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let d: Vec<f64> = rows.iter().map(|r| r.2).collect();
        if let (Ok(full), Ok(base)) = (ols_r_squared(&y, &[&b, &d]), ols_r_squared(&y, &[&b])) {
            prop_assert!(full - base >= -1e-12);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&full));
        }
    }

    #[test]
    fn percentile_matches_rank_oracle(xs in prop::collection::vec(-100.0..100.0f64, 1..40), q in 0.0..=100.0f64) {
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        // independent formulation: weights over the two bracketing order statistics
        let h = (s.len() - 1) as f64 * q / 100.0;
        let expect: f64 = s.iter().enumerate().map(|(i, v)| v * (1.0 - (i as f64 - h).abs()).max(0.0)).sum();
        let got = percentile_linear(&xs, q).unwrap();
        prop_assert!((got - expect).abs() < 1e-9, "got {} expect {}", got, expect);
        prop_assert!(got >= s[0] && got <= s[s.len() - 1]);
    }

    #[test]
    fn threshold_segmentation_is_idempotent(v in prop::collection::vec(0.0..2.0f64, 30..80), m in 1usize..10) {
        let dates: Vec<NaiveDate> = (0..v.len() as i64).map(|i| day0() + chrono::Duration::days(i)).collect();
        let s = DatedSeries::new(dates.clone(), v).unwrap();
        let rule = PhaseRule::ThresholdBased(ThresholdParams { sustain_days: m, ..Default::default() });
        let a = phase_segmentation(&s, dates[10], &rule);
        let b = phase_segmentation(&s, dates[10], &rule);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

/// Brute-force average ranks: rank = 1 + #smaller + (#equal - 1) / 2.
fn rank_oracle(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let smaller = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

#[test]
fn spearman_tied_example_matches_oracle() {
    let x = [1.0, 2.0, 2.0, 4.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    assert_eq!(average_ranks(&x), rank_oracle(&x));
    let expect = pearson(&rank_oracle(&x), &rank_oracle(&y)).unwrap();
    assert_eq!(spearman(&x, &y).unwrap().rho, expect);
}

#[test]
fn covariance_of_uncorrelated_series_is_near_diagonal() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            (0..20_000)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let v = covariance_matrix(&cols).unwrap();
    for i in 0..4 {
        assert!((v.matrix()[(i, i)] - 1.0).abs() < 0.05);
        for j in 0..4 {
            if i != j {
                assert!(v.matrix()[(i, j)].abs() < 0.05);
            }
        }
    }
}
