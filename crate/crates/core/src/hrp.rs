//! High-rank preheating.
//!
//! For a main run in RSI orientation: train asymmetric LoRA at rank
//! `hrp_rank` from `Â₀ = 0`, `B̂₀` orthonormal and frozen, then take the top-`r`
//! right singular vectors of `X̂ = (α/h)·B̂·Âᵀ` as the frozen `A₀` of the main
//! run with `B₀ = 0`. The LSI main run mirrors this with left vectors.

use serde::{Deserialize, Serialize};

use crate::adapters::{self, AdapterPair, Side, UpdateVariant};
use crate::error::{invalid, Error, Result};
use crate::linalg::{random_orthogonal, randomized_svd, Matrix, RngState};
use crate::objective::FactorTarget;

pub const EXTRACT_OVERSAMPLE: usize = 8;
pub const EXTRACT_POWER_ITERS: usize = 2;

/// Preheating settings. `orientation` is the side of the main run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrpConfig {
    pub hrp_rank: usize,
    pub hrp_steps: usize,
    pub hrp_lr: f64,
    /// Minibatch size for the preheat; only the toy fine-tuning task uses it.
    #[serde(default)]
    pub hrp_batch: Option<usize>,
    #[serde(default = "default_orientation")]
    pub orientation: Side,
}

fn default_orientation() -> Side {
    Side::Rsi
}

impl HrpConfig {
    pub fn new(hrp_rank: usize, hrp_steps: usize, hrp_lr: f64) -> Self {
        Self {
            hrp_rank,
            hrp_steps,
            hrp_lr,
            hrp_batch: None,
            orientation: Side::Rsi,
        }
    }

    pub fn validate(&self, r: usize, a: usize, b: usize) -> Result<()> {
        if self.hrp_rank < r || self.hrp_rank > a.min(b) {
            return Err(invalid(format!(
                "hrp_rank {} must be in {r}..={}",
                self.hrp_rank,
                a.min(b)
            )));
        }
        if self.hrp_steps == 0 {
            return Err(invalid("hrp_steps must be at least 1"));
        }
        if !(self.hrp_lr > 0.0 && self.hrp_lr.is_finite()) {
            return Err(invalid(format!("hrp_lr must be positive, got {}", self.hrp_lr)));
        }
        if self.hrp_batch == Some(0) {
            return Err(invalid("hrp_batch must be at least 1"));
        }
        Ok(())
    }
}

/// Trained preheat adapters and the extracted main-run directions.
#[derive(Debug, Clone)]
pub struct PreheatResult {
    pub preheated: AdapterPair,
    /// `a × r` right vectors for an RSI main run, `b × r` left vectors for LSI.
    pub extracted_directions: Matrix,
}

/// Preheat on the factorization objective with exact gradients.
pub fn preheat(target: &FactorTarget, cfg: &HrpConfig, r: usize, alpha: f64, rng: &mut RngState) -> Result<PreheatResult> {
    let m = target.matrix().clone();
    preheat_with(target.a(), target.b(), cfg, r, alpha, rng, |x| x.try_sub(&m))
}

/// Preheat against an arbitrary weight-space gradient.
///
/// `grad` receives the current effective update `X̂` and returns `∇_W 𝓛` at
/// that point, without the `α/h` adapter scale.
pub fn preheat_with(
    a: usize,
    b: usize,
    cfg: &HrpConfig,
    r: usize,
    alpha: f64,
    rng: &mut RngState,
    mut grad: impl FnMut(&Matrix) -> Result<Matrix>,
) -> Result<PreheatResult> {
    cfg.validate(r, a, b)?;
    let h = cfg.hrp_rank;
    let preheat_side = cfg.orientation.flip();
    let mut pair = match preheat_side {
        Side::Lsi => AdapterPair::new(Matrix::zeros(a, h), random_orthogonal(b, h, rng)?, alpha)?,
        Side::Rsi => AdapterPair::new(random_orthogonal(a, h, rng)?, Matrix::zeros(b, h), alpha)?,
    }
    .with_orientation(preheat_side);
    let variant = UpdateVariant::Asymmetric { eta: cfg.hrp_lr };
    for k in 0..cfg.hrp_steps {
        let g = grad(&adapters::effective_delta(&pair))?.scale(pair.scale());
        if !g.is_finite() {
            return Err(Error::Divergence { step: k, loss: f64::NAN });
        }
        pair = adapters::step(&pair, &g, &variant)?;
    }
    let x = adapters::effective_delta(&pair);
    if !x.is_finite() {
        return Err(Error::Divergence {
            step: cfg.hrp_steps,
            loss: f64::NAN,
        });
    }
    let approx = randomized_svd(&x, r, EXTRACT_OVERSAMPLE, EXTRACT_POWER_ITERS, rng)?;
    let extracted_directions = match cfg.orientation {
        Side::Rsi => approx.v,
        Side::Lsi => approx.u,
    };
    Ok(PreheatResult {
        preheated: pair,
        extracted_directions,
    })
}

/// Main-run pair from extracted directions: the zero side keeps the
/// effective update at exactly zero.
pub fn pair_from_directions(directions: &Matrix, orientation: Side, a: usize, b: usize, alpha: f64) -> Result<AdapterPair> {
    let r = directions.cols();
    let pair = match orientation {
        Side::Rsi => AdapterPair::new(directions.clone(), Matrix::zeros(b, r), alpha)?,
        Side::Lsi => AdapterPair::new(Matrix::zeros(a, r), directions.clone(), alpha)?,
    };
    Ok(pair.with_orientation(orientation))
}

/// Preheat, extract and build the main-run initialization.
pub fn hrp_initialize(target: &FactorTarget, cfg: &HrpConfig, r: usize, alpha: f64, rng: &mut RngState) -> Result<AdapterPair> {
    let result = preheat(target, cfg, r, alpha, rng)?;
    pair_from_directions(&result.extracted_directions, cfg.orientation, target.a(), target.b(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{effective_delta, initialize, train, InitSpec};
    use crate::linalg::max_principal_angle;
    use crate::objective::Preset;

    #[test]
    fn one_step_matches_hand_derivation() {
        let t = Preset::M2.target();
        let (h, alpha, eta) = (6, 2.0, 0.01);
        let cfg = HrpConfig::new(h, 1, eta);
        let res = preheat(&t, &cfg, 2, alpha, &mut RngState::new(3)).unwrap();
        let b0 = res.preheated.b.clone();
        let ch = alpha / h as f64;
        let a1 = t.matrix().tr_matmul(&b0).unwrap().scale(eta * ch);
        assert!(res.preheated.a.max_abs_diff(&a1) < 1e-12);
        let x1 = effective_delta(&res.preheated);
        let expected = b0.matmul_tr(&b0).unwrap().matmul(t.matrix()).unwrap().scale(eta * ch * ch);
        assert!(x1.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn frozen_side_is_orthonormal_and_unchanged() {
        let t = Preset::M1.target();
        let cfg = HrpConfig::new(6, 50, 0.05);
        let mut rng = RngState::new(9);
        let res = preheat(&t, &cfg, 2, 2.0, &mut rng).unwrap();
        let b0 = random_orthogonal(32, 6, &mut RngState::new(9)).unwrap();
        assert_eq!(res.preheated.b, b0);
        assert!(res.extracted_directions.orthonormality_defect() < 1e-8);
        assert_eq!(res.extracted_directions.shape(), (32, 2));
    }

    #[test]
    fn directions_do_not_depend_on_step_count() {
        let t = Preset::M2.target();
        let dirs = |steps| {
            let cfg = HrpConfig::new(8, steps, 0.01);
            preheat(&t, &cfg, 2, 2.0, &mut RngState::new(4)).unwrap().extracted_directions
        };
        let one = dirs(1);
        for steps in [5, 100] {
            assert!(max_principal_angle(&one, &dirs(steps)).unwrap() < 1e-8);
        }
    }

    #[test]
    fn full_rank_preheat_recovers_top_directions() {
        let t = Preset::M2.target();
        let cfg = HrpConfig::new(32, 2000, 0.05);
        let res = preheat(&t, &cfg, 2, 2.0, &mut RngState::new(1)).unwrap();
        let v2 = t.svd().v.columns_range(0, 2);
        assert!(max_principal_angle(&v2, &res.extracted_directions).unwrap() <= 1e-4);
    }

    #[test]
    fn initialization_has_zero_delta_and_is_deterministic() {
        let t = Preset::M1.target();
        let mut cfg = HrpConfig::new(6, 20, 0.05);
        for side in [Side::Rsi, Side::Lsi] {
            cfg.orientation = side;
            let p = hrp_initialize(&t, &cfg, 2, 2.0, &mut RngState::new(5)).unwrap();
            let q = hrp_initialize(&t, &cfg, 2, 2.0, &mut RngState::new(5)).unwrap();
            assert_eq!(p, q);
            assert!(effective_delta(&p).is_zero());
            assert_eq!(p.orientation, Some(side));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let t = Preset::M1.target();
        let mut rng = RngState::new(0);
        assert!(preheat(&t, &HrpConfig::new(1, 10, 0.1), 2, 2.0, &mut rng).is_err());
        assert!(preheat(&t, &HrpConfig::new(33, 10, 0.1), 2, 2.0, &mut rng).is_err());
        assert!(preheat(&t, &HrpConfig::new(6, 0, 0.1), 2, 2.0, &mut rng).is_err());
        assert!(preheat(&t, &HrpConfig::new(6, 10, -0.1), 2, 2.0, &mut rng).is_err());
    }

    #[test]
    fn hrp_beats_gaussian_on_m1() {
        let t = Preset::M1.target();
        let cfg = HrpConfig::new(6, 50, 0.01);
        let variant = UpdateVariant::Asymmetric { eta: 0.01 };
        let mut hrp_total = 0.0;
        let mut gauss_total = 0.0;
        for seed in 0..8 {
            let mut rng = RngState::new(seed);
            let hrp_pair = initialize(&InitSpec::HrpDerived(cfg), 32, 32, 2, 2.0, Some(&t), &mut rng).unwrap();
            let gauss = initialize(
                &InitSpec::ZeroPlusGaussian { side: Side::Rsi, sigma: 1.0 },
                32,
                32,
                2,
                2.0,
                None,
                &mut rng,
            )
            .unwrap();
            hrp_total += train(&t, hrp_pair, &variant, 2000, 2000).unwrap().1.final_loss();
            gauss_total += train(&t, gauss, &variant, 2000, 2000).unwrap().1.final_loss();
        }
        assert!(hrp_total < gauss_total);
    }
}
