//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Smallest absolute eigenvalue of a symmetric matrix.
pub fn min_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|r| (0..r).all(|c| m[(r, c)] == m[(c, r)]))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric matrix through its SVD, with the 2-norm condition
/// number. Returns `None` when a singular value is zero or non-finite.
pub fn inverse_with_condition(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > 0.0) || !max.is_finite() {
        return None;
    }
    let u = svd.u.as_ref()?;
    let vt = svd.v_t.as_ref()?;
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Some((vt.transpose() * inv_s * u.transpose(), max / min))
}

pub fn ones(k: usize) -> DVector<f64> {
    DVector::from_element(k, 1.0)
}

/// `1' M 1`.
pub fn grand_sum(m: &DMatrix<f64>) -> f64 {
    m.iter().sum()
}
