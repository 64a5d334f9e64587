//! Small dense linear-algebra helpers on `nalgebra` matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Condition number above which a restricted inverse is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Operator norm induced by the Euclidean norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    match m.shape() {
        (0, _) | (_, 0) => 0.0,
        (1, 1) => m[(0, 0)].abs(),
        _ => m.clone().svd(false, false).singular_values.max(),
    }
}

/// Orthonormal basis of the range of a projection.
///
/// Nonzero singular values of a projection are at least one, so anything
/// below one half is treated as numerical noise.
pub fn projection_range_basis(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 0.5)
        .collect();
    DMatrix::from_fn(n, cols.len(), |r, c| u[(r, cols[c])])
}

/// `U_Q^{-1} Q_to`, where `U_Q` is the restriction of `u` mapping
/// `range(q_from)` onto `range(q_to)`.
///
/// The inverse is the SVD pseudo-inverse of `u` restricted to an orthonormal
/// basis of `range(q_from)`.
pub fn restricted_inverse(
    u: &DMatrix<f64>,
    q_from: &DMatrix<f64>,
    q_to: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = u.nrows();
    let basis = projection_range_basis(q_from);
    if basis.ncols() == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let image = u * &basis;
    let svd = image.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::RestrictedInversion { cond });
    }
    let pinv = svd
        .pseudo_inverse(0.0)
        .map_err(|_| Error::RestrictedInversion { cond })?;
    Ok(basis * pinv * q_to)
}

/// `||P^2 - P||`.
pub fn idempotency_defect(p: &DMatrix<f64>) -> f64 {
    spectral_norm(&(p * p - p))
}
