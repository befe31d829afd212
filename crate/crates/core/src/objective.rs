//! The matrix-factorization objective `½‖X − M‖_F²`, its gradient, the
//! Eckart–Young optimum and the preset targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{svd, Matrix, SvdResult};

/// Named 32×32 diagonal targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// `diag(I₁₂, 0₂₀)`.
    M1,
    /// `diag(12, 11, …, 1, 0, …, 0)`.
    M2,
    /// `diag(2⁰, 2⁻¹, …, 2⁻¹¹, 0, …, 0)`.
    #[serde(rename = "Mgeo")]
    MGeo,
}

impl Preset {
    pub const DIM: usize = 32;
    pub const ALL: [Preset; 3] = [Preset::M1, Preset::M2, Preset::MGeo];

    pub fn name(self) -> &'static str {
        match self {
            Preset::M1 => "M1",
            Preset::M2 => "M2",
            Preset::MGeo => "Mgeo",
        }
    }

    pub fn spectrum(self) -> Vec<f64> {
        let mut diag = vec![0.0; Self::DIM];
        for (i, d) in diag.iter_mut().enumerate().take(12) {
            *d = match self {
                Preset::M1 => 1.0,
                Preset::M2 => (12 - i) as f64,
                Preset::MGeo => 0.5f64.powi(i as i32),
            };
        }
        diag
    }

    pub fn matrix(self) -> Matrix {
        Matrix::from_diag(Self::DIM, Self::DIM, &self.spectrum())
    }

    pub fn target(self) -> FactorTarget {
        FactorTarget::new(self.matrix()).expect("preset SVD converges")
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M1" => Ok(Preset::M1),
            "M2" => Ok(Preset::M2),
            "Mgeo" | "MGeo" | "M_geo" => Ok(Preset::MGeo),
            other => Err(invalid(format!("unknown preset {other:?} (expected M1, M2 or Mgeo)"))),
        }
    }
}

/// Target `M = W_target − W_init` (b × a) with its SVD cached.
#[derive(Debug, Clone)]
pub struct FactorTarget {
    m: Matrix,
    svd: SvdResult,
}

impl FactorTarget {
    pub fn new(m: Matrix) -> Result<Self> {
        let svd = svd(&m)?;
        Ok(Self { m, svd })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn svd(&self) -> &SvdResult {
        &self.svd
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.svd.s
    }

    /// Number of columns, `a` (input dimension).
    pub fn a(&self) -> usize {
        self.m.cols()
    }

    /// Number of rows, `b` (output dimension).
    pub fn b(&self) -> usize {
        self.m.rows()
    }

    pub fn min_dim(&self) -> usize {
        self.a().min(self.b())
    }

    /// `Σ σ_i²`, i.e. `‖M‖_F²`.
    pub fn total_energy(&self) -> f64 {
        self.svd.s.iter().map(|s| s * s).sum()
    }

    /// Smallest gap between consecutive nonzero singular values.
    pub fn min_spectral_gap(&self) -> f64 {
        let nonzero: Vec<f64> = self.svd.s.iter().copied().filter(|&s| s > 1e-12).collect();
        nonzero.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
    }

    /// Left singular vector `u_i` (0-based index).
    pub fn left_vector(&self, i: usize) -> Vec<f64> {
        self.svd.u.column(i)
    }

    /// Right singular vector `v_i` (0-based index).
    pub fn right_vector(&self, i: usize) -> Vec<f64> {
        self.svd.v.column(i)
    }

    fn check_rank(&self, r: usize) -> Result<()> {
        if r > self.min_dim() {
            return Err(invalid(format!("rank {r} exceeds min(a, b) = {}", self.min_dim())));
        }
        Ok(())
    }
}

/// `½‖x − M‖_F²`.
pub fn loss(x: &Matrix, target: &FactorTarget) -> Result<f64> {
    Ok(0.5 * x.try_sub(&target.m)?.frobenius_norm_sq())
}

/// `G = (α/r)(x − M)`, the gradient with the adapter scale folded in.
pub fn gradient(x: &Matrix, target: &FactorTarget, alpha: f64, r: usize) -> Result<Matrix> {
    if r == 0 {
        return Err(invalid("rank must be at least 1"));
    }
    Ok(x.try_sub(&target.m)?.scale(alpha / r as f64))
}

/// `Σ_{i≤r} σ_i u_i v_iᵀ`.
pub fn best_rank_r(target: &FactorTarget, r: usize) -> Result<Matrix> {
    target.check_rank(r)?;
    Ok(target.svd.truncate(r).reconstruct())
}

/// `½ Σ_{i>r} σ_i²`.
pub fn optimal_loss(target: &FactorTarget, r: usize) -> Result<f64> {
    target.check_rank(r)?;
    Ok(0.5 * target.svd.s[r..].iter().map(|s| s * s).sum::<f64>())
}
