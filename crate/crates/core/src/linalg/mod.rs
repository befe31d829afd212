//! Dense linear-algebra substrate: matrices, factorizations, random
//! generators and the matrix exponential. Everything is deterministic given
//! a seed.

mod eigen;
mod matrix;
mod random;
mod rsvd;
mod svd;

pub use eigen::{asymmetry, expm_neg, sym_eigen, SymEigen};
pub use matrix::{frobenius_norm, Matrix};
pub use random::{gaussian_matrix, random_orthogonal, RngState};
pub use rsvd::randomized_svd;
pub use svd::{orthonormalize_columns, svd, SvdResult};

/// `U · diag(I_r, 0) · Uᵀ · M`: projection of `M` onto the span of the first
/// `r` columns of `U`.
pub fn project_onto_leading_columns(u: &Matrix, r: usize, m: &Matrix) -> crate::Result<Matrix> {
    let ur = u.columns_range(0, r);
    ur.matmul(&ur.tr_matmul(m)?)
}

/// Cosines of the principal angles between the column spans of two
/// matrices with orthonormal columns, largest first.
pub fn principal_cosines(q1: &Matrix, q2: &Matrix) -> crate::Result<Vec<f64>> {
    Ok(svd(&q1.tr_matmul(q2)?)?.s.into_iter().map(|c| c.min(1.0)).collect())
}

/// Largest principal angle (radians) between two orthonormal column spans
/// of equal dimension, computed from the sines `σ((I − Q₁Q₁ᵀ)·Q₂)` so small
/// angles keep full precision.
pub fn max_principal_angle(q1: &Matrix, q2: &Matrix) -> crate::Result<f64> {
    let residual = q2.try_sub(&q1.matmul(&q1.tr_matmul(q2)?)?)?;
    let largest_sine = svd(&residual)?.s.first().copied().unwrap_or(0.0);
    Ok(largest_sine.min(1.0).asin())
}
