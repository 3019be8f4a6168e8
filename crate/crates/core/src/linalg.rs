//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Returns `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `A - Aᵀ` relative to the largest absolute entry of `A`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

/// Cholesky factor of a symmetric matrix, or `NotPositiveDefinite`.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    Cholesky::new(a.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `log |A|` from a Cholesky factor.
pub fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(a, what)?.inverse()))
}

/// Factor `L` with `L Lᵀ = A` for a symmetric positive semi-definite `A`.
///
/// Built from the symmetric eigendecomposition so that singular matrices
/// (such as a process noise acting on a subspace) are accepted. Returns `None`
/// when an eigenvalue is negative beyond round-off.
pub fn psd_factor(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = symmetrize(a).symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return None;
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Some(factor)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}
