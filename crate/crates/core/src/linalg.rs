//! Small dense helpers shared by the estimators.
//!
//! Every inverse goes through a symmetric eigendecomposition so that the
//! condition number is known before anything is divided by a tiny eigenvalue.

use nalgebra::{DMatrix, SymmetricEigen};

/// Condition number above which a Gram matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse of a symmetric positive definite matrix, or the condition number
/// that made it unusable.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        return Err(f64::INFINITY);
    }
    let condition = max / min;
    if condition > MAX_CONDITION {
        return Err(condition);
    }
    let vecs = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| vecs[(i, j)] / eig.eigenvalues[j]);
    Ok(symmetrize(&(scaled * vecs.transpose())))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Gram matrix `XᵀX`.
pub(crate) fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Sum of `w_i · x_i x_iᵀ` over the rows `x_i` of `x`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut out = DMatrix::zeros(p, p);
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = x[(i, a)] * wi;
            if xa == 0.0 {
                continue;
            }
            for b in 0..p {
                out[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}
