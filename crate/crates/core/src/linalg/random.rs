//! Seeded random generators.
//!
//! All randomness flows through [`RngState`], a thin wrapper over the
//! ChaCha8 stream cipher. ChaCha is counter based, so independent streams
//! for parallel trials are derived from `(master seed, stream index)` without
//! any shared state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::Matrix;
use super::svd::orthonormalize_columns;
use crate::error::{invalid, Result};

/// Single-owner random stream. Identical `(seed, stream)` pairs yield
/// identical sequences within one build.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream that does not overlap with this one or its siblings.
    ///
    /// The child is keyed by a seed drawn from this stream, so calling
    /// `fork` repeatedly gives distinct children.
    pub fn fork(&mut self) -> RngState {
        let seed = self.rng.gen::<u64>();
        RngState::new(seed)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// `amount` distinct indices from `0..len`, in sampling order.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, len, amount).into_vec()
    }
}

/// Matrix with i.i.d. `N(0, sigma²)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut RngState) -> Result<Matrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let data = (0..rows * cols).map(|_| sigma * rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// `n × k` matrix with orthonormal columns: the Q factor of a Gaussian draw,
/// with column signs fixed so that the implied R has a positive diagonal.
pub fn random_orthogonal(n: usize, k: usize, rng: &mut RngState) -> Result<Matrix> {
    if k > n {
        return Err(invalid(format!("random_orthogonal needs k <= n, got k={k}, n={n}")));
    }
    if k == 0 {
        return Ok(Matrix::zeros(n, 0));
    }
    let g = gaussian_matrix(n, k, 1.0, rng)?;
    Ok(orthonormalize_columns(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;

    #[test]
    fn gaussian_moments() {
        let mut rng = RngState::new(7);
        let g = gaussian_matrix(1000, 1000, 1.0, &mut rng).unwrap();
        let n = g.as_slice().len() as f64;
        let mean = g.as_slice().iter().sum::<f64>() / n;
        let var = g.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gaussian_rejects_nonpositive_sigma() {
        let mut rng = RngState::new(0);
        assert!(gaussian_matrix(2, 2, 0.0, &mut rng).is_err());
        assert!(gaussian_matrix(2, 2, -1.0, &mut rng).is_err());
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let a = gaussian_matrix(5, 4, 1.0, &mut RngState::new(42)).unwrap();
        let b = gaussian_matrix(5, 4, 1.0, &mut RngState::new(42)).unwrap();
        let c = gaussian_matrix(5, 4, 1.0, &mut RngState::new(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s1 = gaussian_matrix(5, 4, 1.0, &mut RngState::with_stream(42, 1)).unwrap();
        assert_ne!(a, s1);
    }

    #[test]
    fn orthogonal_columns() {
        let mut rng = RngState::new(3);
        for (n, k) in [(1, 1), (5, 2), (32, 6), (10, 10)] {
            let q = random_orthogonal(n, k, &mut rng).unwrap();
            assert_eq!(q.shape(), (n, k));
            assert!(q.orthonormality_defect() <= 1e-12);
        }
        let q = random_orthogonal(1, 1, &mut rng).unwrap();
        assert!((q[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(random_orthogonal(2, 3, &mut rng).is_err());
    }

    #[test]
    fn orthogonal_3x3_has_unit_determinant() {
        let q = random_orthogonal(3, 3, &mut RngState::new(11)).unwrap();
        let det = q[(0, 0)] * (q[(1, 1)] * q[(2, 2)] - q[(1, 2)] * q[(2, 1)])
            - q[(0, 1)] * (q[(1, 0)] * q[(2, 2)] - q[(1, 2)] * q[(2, 0)])
            + q[(0, 2)] * (q[(1, 0)] * q[(2, 1)] - q[(1, 1)] * q[(2, 0)]);
        assert!((det.abs() - 1.0).abs() <= 1e-12, "det {det}");
        // Gram eigenvalues all one as a second view of the same fact.
        let eig = sym_eigen(&q.tr_matmul(&q).unwrap()).unwrap();
        assert!(eig.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_is_deterministic() {
        let a = random_orthogonal(8, 3, &mut RngState::new(5)).unwrap();
        let b = random_orthogonal(8, 3, &mut RngState::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
