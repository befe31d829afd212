use super::matrix::Matrix;
use super::random::{gaussian_matrix, RngState};
use super::svd::{svd, SvdResult};
use crate::error::{invalid, Result};

/// Rank-`k` approximate SVD from a Gaussian range sketch.
///
/// The sketch has `k + oversample` columns (capped at `min(rows, cols)`);
/// each power iteration re-orthonormalizes before multiplying again.
pub fn randomized_svd(
    m: &Matrix,
    k: usize,
    oversample: usize,
    power_iters: usize,
    rng: &mut RngState,
) -> Result<SvdResult> {
    let full = m.rows().min(m.cols());
    if k == 0 || k > full {
        return Err(invalid(format!("randomized_svd needs 1 <= k <= {full}, got {k}")));
    }
    let width = (k + oversample).min(full);
    let omega = gaussian_matrix(m.cols(), width, 1.0, rng)?;
    let mut q = range_basis(&m.matmul(&omega)?)?;
    for _ in 0..power_iters {
        let z = range_basis(&m.tr_matmul(&q)?)?;
        q = range_basis(&m.matmul(&z)?)?;
    }
    // Small exact problem on the projected matrix.
    let small = q.tr_matmul(m)?;
    let inner = svd(&small)?;
    let u = q.matmul(&inner.u)?;
    Ok(SvdResult { u, s: inner.s, v: inner.v }.truncate(k))
}

/// Orthonormal basis for the column space, completed when rank deficient.
fn range_basis(y: &Matrix) -> Result<Matrix> {
    Ok(svd(y)?.u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_low_rank_input() {
        let mut rng = RngState::new(21);
        let left = gaussian_matrix(20, 3, 1.0, &mut rng).unwrap();
        let right = gaussian_matrix(3, 15, 1.0, &mut rng).unwrap();
        let m = left.matmul(&right).unwrap();
        let approx = randomized_svd(&m, 3, 5, 0, &mut rng).unwrap();
        let exact = svd(&m).unwrap();
        for i in 0..3 {
            assert!((approx.s[i] - exact.s[i]).abs() < 1e-8);
        }
        assert!(approx.u.orthonormality_defect() < 1e-10);
        assert!(approx.v.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn power_iterations_on_decaying_spectrum() {
        let diag: Vec<f64> = (0..20).map(|i| 0.5f64.powi(i)).collect();
        let m = Matrix::from_diag(20, 20, &diag);
        let mut rng = RngState::new(5);
        let approx = randomized_svd(&m, 4, 4, 2, &mut rng).unwrap();
        for (i, (s, d)) in approx.s.iter().zip(&diag).enumerate() {
            assert!((s - d).abs() <= 1e-6 * d, "i={i}");
        }
    }

    #[test]
    fn full_width_without_oversampling() {
        let mut rng = RngState::new(8);
        let m = gaussian_matrix(9, 6, 1.0, &mut rng).unwrap();
        let approx = randomized_svd(&m, 6, 0, 0, &mut rng).unwrap();
        let exact = svd(&m).unwrap();
        for (a, e) in approx.s.iter().zip(&exact.s) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_rank() {
        let mut rng = RngState::new(0);
        let m = Matrix::identity(4);
        assert!(randomized_svd(&m, 0, 2, 0, &mut rng).is_err());
        assert!(randomized_svd(&m, 5, 2, 0, &mut rng).is_err());
    }
}
