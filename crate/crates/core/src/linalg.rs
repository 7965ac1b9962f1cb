//! Dense symmetric-matrix helpers on top of nalgebra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

/// Full symmetric eigendecomposition with eigenpairs sorted by descending
/// eigenvalue. Columns of the returned matrix are the eigenvectors.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence { n, max_abs: m.amax() });
    }
    let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::NonConvergence { n, max_abs: m.amax() })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Eigenvalues only, descending.
pub fn symmetric_eigenvalues_desc(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let non_convergence = || Error::NonConvergence {
        n: m.nrows(),
        max_abs: m.amax(),
    };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(non_convergence());
    }
    let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(non_convergence());
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, treating eigenvalues
/// with `|lambda| <= rtol * max|lambda|` as zero. Returns the inverse and
/// the numerical rank.
pub fn symmetric_pseudo_inverse(m: &DMatrix<f64>, rtol: f64) -> Result<(DMatrix<f64>, usize)> {
    let (values, vectors) = symmetric_eigen_desc(m)?;
    let n = m.nrows();
    let smax = values.iter().fold(0.0f64, |acc, v| acc.max(libm::fabs(*v)));
    let cutoff = rtol * smax;
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in values.iter().enumerate() {
        if smax == 0.0 || libm::fabs(lambda) <= cutoff {
            continue;
        }
        rank += 1;
        let v: DVector<f64> = vectors.column(k).into_owned();
        pinv += (&v * v.transpose()) / lambda;
    }
    Ok((pinv, rank))
}

/// Symmetrize in place as `(M + M^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_inverse_of_singular_matrix() {
        // rank-1: [[1,1],[1,1]] has pinv [[.25,.25],[.25,.25]]
        let m = DMatrix::from_element(2, 2, 1.0);
        let (p, rank) = symmetric_pseudo_inverse(&m, 1e-10).unwrap();
        assert_eq!(rank, 1);
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenpairs_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = symmetric_eigen_desc(&m).unwrap();
        assert_eq!(vals, alloc::vec![5.0, 3.0, 2.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }
}
