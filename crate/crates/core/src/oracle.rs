//! Closed-form trajectories and theorem bounds used as ground truth for the
//! discrete trainer.
//!
//! The closed forms take the rate that multiplies the frozen Gram matrix in
//! the flow. The trainer folds `α/r` into its gradient, so a trainer run with
//! learning rate `η` corresponds to `eta = η·α/r` here (see [`flow_rate`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::Side;
use crate::error::{invalid, Result};
use crate::linalg::{expm_neg, Matrix};
use crate::objective::{optimal_loss, FactorTarget};

/// Theorem-derived loss bound with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    pub inputs: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BoundReport {
    fn new(name: &str, value: f64, inputs: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            value,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            note: None,
        }
    }
}

/// Rate for the closed forms matching a trainer step size `eta`.
pub fn flow_rate(eta: f64, alpha: f64, r: usize) -> f64 {
    eta * alpha / r as f64
}

/// `X_t = (I − e^{−η·Z₀·t})·M` for asymmetric LoRA with frozen `B`.
pub fn closed_asym_lsi(target: &FactorTarget, z0: &Matrix, eta: f64, t: f64) -> Result<Matrix> {
    let m = target.matrix();
    if z0.shape() != (m.rows(), m.rows()) {
        return Err(invalid(format!("Z0 must be {0}×{0}, got {1:?}", m.rows(), z0.shape())));
    }
    let decay = expm_neg(z0, eta * t)?;
    m.try_sub(&decay.matmul(m)?)
}

/// `X_t = M·(I − e^{−η·Y₀·t})` for asymmetric LoRA with frozen `A`.
pub fn closed_asym_rsi(target: &FactorTarget, y0: &Matrix, eta: f64, t: f64) -> Result<Matrix> {
    let m = target.matrix();
    if y0.shape() != (m.cols(), m.cols()) {
        return Err(invalid(format!("Y0 must be {0}×{0}, got {1:?}", m.cols(), y0.shape())));
    }
    let decay = expm_neg(y0, eta * t)?;
    m.try_sub(&m.matmul(&decay)?)
}

/// Loss of asymmetric LoRA from the target-SVD initialization:
/// `𝓛* + ½·e^{−2η(α/r)²t}·Σ_{i≤r} σᵢ²`.
pub fn wise_asym_loss(target: &FactorTarget, r: usize, alpha: f64, eta: f64, t: f64) -> Result<f64> {
    let floor = optimal_loss(target, r)?;
    let c = alpha / r as f64;
    let head: f64 = target.singular_values()[..r].iter().map(|s| s * s).sum();
    Ok(floor + 0.5 * (-2.0 * eta * c * c * t).exp() * head)
}

/// Fixed-step RK4 size used by the scalar oracles.
fn rk_steps(eta: f64, t: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, 0.0);
    }
    let h = (1e-4 / eta).min(t / 1000.0);
    let n = (t / h).ceil() as usize;
    (n, t / n as f64)
}

fn rk4<const N: usize>(mut state: [f64; N], n: usize, h: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let shifted = |s: &[f64; N], k: &[f64; N], w: f64| -> [f64; N] {
        let mut out = *s;
        for i in 0..N {
            out[i] += w * k[i];
        }
        out
    };
    for _ in 0..n {
        let k1 = f(&state);
        let k2 = f(&shifted(&state, &k1, 0.5 * h));
        let k3 = f(&shifted(&state, &k2, 0.5 * h));
        let k4 = f(&shifted(&state, &k3, h));
        for i in 0..N {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    state
}

/// One diagonal coordinate of classic LoRA from the target-SVD
/// initialization, by RK4 on `ẋ = −η·c·(x − σ)·√(c² + 4x²)`, `c = α/r`,
/// `x₀ = 0`.
pub fn classic_wise_coord(sigma: f64, alpha: f64, r: usize, eta: f64, t: f64) -> Result<f64> {
    if sigma < 0.0 {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let c = alpha / r as f64;
    let (n, h) = rk_steps(eta, t);
    let [x] = rk4([0.0], n, h, |&[x]| [-eta * c * (x - sigma) * (c * c + 4.0 * x * x).sqrt()]);
    Ok(x)
}

/// Full `(x, y, z)` state of one diagonal coordinate under the classic flow,
/// starting from `(0, c, 0)` for RSI or `(0, 0, c)` for LSI.
pub fn classic_wise_state(sigma: f64, alpha: f64, r: usize, eta: f64, t: f64, side: Side) -> (f64, f64, f64) {
    let c = alpha / r as f64;
    let start = match side {
        Side::Rsi => [0.0, c, 0.0],
        Side::Lsi => [0.0, 0.0, c],
    };
    let (n, h) = rk_steps(eta, t);
    let [x, y, z] = rk4(start, n, h, |&[x, y, z]| {
        let pull = -eta * c * (x - sigma);
        [pull * (y + z), 2.0 * pull * x, 2.0 * pull * x]
    });
    (x, y, z)
}

/// `(y + z)² − 4x²`, constant along the per-coordinate classic flow.
pub fn conserved_quantity(x: f64, y: f64, z: f64) -> f64 {
    (y + z) * (y + z) - 4.0 * x * x
}

fn check_rank(target: &FactorTarget, r: usize) -> Result<()> {
    if r == 0 || r > target.min_dim() {
        return Err(invalid(format!("rank {r} must be in 1..={}", target.min_dim())));
    }
    Ok(())
}

/// Expected final loss of asymmetric LoRA from zero+random initialization:
/// `((d − r)/2d)·Σσᵢ²` with `d = b` for LSI and `d = a` for RSI.
pub fn lower_bound_random(target: &FactorTarget, r: usize, side: Side) -> Result<BoundReport> {
    check_rank(target, r)?;
    let d = match side {
        Side::Lsi => target.b(),
        Side::Rsi => target.a(),
    } as f64;
    let energy = target.total_energy();
    let value = (d - r as f64) / (2.0 * d) * energy;
    Ok(BoundReport::new(
        &format!("random_lower_bound_{side}"),
        value,
        &[("d", d), ("r", r as f64), ("energy", energy)],
    ))
}

/// `Σ_{r<i≤h} σᵢ² + ((a − h)/2a)·Σσᵢ²` for HRP at preheating rank `h`.
///
/// The head sum is not halved. When the value exceeds the RSI random-init
/// bound the report carries a note saying so.
pub fn upper_bound_hrp(target: &FactorTarget, r: usize, hrp_rank: usize) -> Result<BoundReport> {
    check_rank(target, r)?;
    if hrp_rank < r || hrp_rank > target.min_dim() {
        return Err(invalid(format!("hrp_rank {hrp_rank} must be in {r}..={}", target.min_dim())));
    }
    let s = target.singular_values();
    let middle: f64 = s[r..hrp_rank].iter().map(|x| x * x).sum();
    let a = target.a() as f64;
    let energy = target.total_energy();
    let value = middle + (a - hrp_rank as f64) / (2.0 * a) * energy;
    let mut report = BoundReport::new(
        "hrp_upper_bound",
        value,
        &[("a", a), ("r", r as f64), ("hrp_rank", hrp_rank as f64), ("energy", energy)],
    );
    let random = lower_bound_random(target, r, Side::Rsi)?.value;
    if value > random {
        report.note = Some(format!("bound {value:.6} exceeds the random-init bound {random:.6}"));
    }
    Ok(report)
}

/// Loss floor once the random side is orthogonal to `u_i`:
/// `𝓛* + ½(σᵢ² − σ_{r+1}²)`, `i` 1-based.
pub fn trap_loss_floor(target: &FactorTarget, r: usize, i: usize) -> Result<f64> {
    check_rank(target, r)?;
    if i == 0 || i > r {
        return Err(invalid(format!("trap index {i} must be in 1..={r}")));
    }
    let s = target.singular_values();
    let next = s.get(r).copied().unwrap_or(0.0);
    Ok(optimal_loss(target, r)? + 0.5 * (s[i - 1] * s[i - 1] - next * next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, project_onto_leading_columns, svd, RngState};
    use crate::objective::{loss, Preset};

    fn random_target(b: usize, a: usize, seed: u64) -> FactorTarget {
        FactorTarget::new(gaussian_matrix(b, a, 1.0, &mut RngState::new(seed)).unwrap()).unwrap()
    }

    #[test]
    fn closed_forms_start_at_zero() {
        let t = random_target(5, 4, 1);
        let z0 = Matrix::identity(5);
        assert!(closed_asym_lsi(&t, &z0, 0.1, 0.0).unwrap().max_abs() < 1e-15);
        assert!(closed_asym_rsi(&t, &Matrix::identity(4), 0.1, 0.0).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn scalar_gram_gives_scalar_exponential() {
        let t = random_target(5, 4, 2);
        let (alpha, r, eta, time) = (4.0, 2usize, 0.3, 1.7);
        let c = alpha / r as f64;
        let x = closed_asym_lsi(&t, &Matrix::identity(5).scale(c), eta, time).unwrap();
        let expected = t.matrix().scale(1.0 - (-c * eta * time).exp());
        assert!(x.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn long_horizon_projects_onto_range() {
        let t = random_target(6, 5, 3);
        let mut rng = RngState::new(4);
        let b0 = gaussian_matrix(6, 2, 1.0, &mut rng).unwrap();
        let z0 = b0.matmul_tr(&b0).unwrap();
        let ub = svd(&b0).unwrap().u;
        let lam_min = svd(&b0).unwrap().s[1].powi(2);
        let time = 45.0 / lam_min;
        let x = closed_asym_lsi(&t, &z0, 1.0, time).unwrap();
        let expected = project_onto_leading_columns(&ub, 2, t.matrix()).unwrap();
        assert!(x.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn transposition_duality() {
        let t = random_target(6, 4, 5);
        let tt = FactorTarget::new(t.matrix().transpose()).unwrap();
        let g = gaussian_matrix(4, 2, 1.0, &mut RngState::new(6)).unwrap();
        let y0 = g.matmul_tr(&g).unwrap();
        let lhs = closed_asym_rsi(&t, &y0, 0.2, 3.0).unwrap();
        let rhs = closed_asym_lsi(&tt, &y0, 0.2, 3.0).unwrap().transpose();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        assert!(closed_asym_lsi(&t, &y0, 0.2, 1.0).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap();
        assert!(closed_asym_rsi(&t, &asym, 0.2, 1.0).is_err());
    }

    #[test]
    fn wise_loss_matches_closed_form() {
        let t = Preset::M2.target();
        let (r, alpha, eta) = (2, 3.0, 0.01);
        let c = alpha / r as f64;
        let vr = t.svd().v.columns_range(0, r);
        let y0 = vr.matmul_tr(&vr).unwrap().scale(c);
        for time in [0.0, 1.0, 10.0, 50.0, 200.0] {
            let x = closed_asym_rsi(&t, &y0, flow_rate(eta, alpha, r), time).unwrap();
            let direct = loss(&x, &t).unwrap();
            let oracle = wise_asym_loss(&t, r, alpha, eta, time).unwrap();
            assert!((direct - oracle).abs() < 1e-10 * oracle.max(1.0), "t={time}");
        }
    }

    #[test]
    fn wise_loss_examples() {
        let t = Preset::M2.target();
        assert!((wise_asym_loss(&t, 2, 2.0, 0.05, 0.0).unwrap() - 325.0).abs() < 1e-12);
        assert!((wise_asym_loss(&t, 2, 2.0, 0.05, 1e4).unwrap() - 192.5).abs() < 1e-12);
        for time in [1.0, 7.0, 30.0] {
            let gap = wise_asym_loss(&t, 2, 2.0, 0.05, time).unwrap() - 192.5;
            assert!((gap - 132.5 * (-0.1 * time).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn classic_coordinate_examples() {
        assert_eq!(classic_wise_coord(0.0, 2.0, 2, 0.1, 50.0).unwrap(), 0.0);
        let (alpha, r, eta, sigma) = (2.0, 2, 0.1, 3.0);
        let time = 0.01 / (alpha * eta / r as f64);
        let x = classic_wise_coord(sigma, alpha, r, eta, time).unwrap();
        let linear = alpha * eta / r as f64 * sigma * time;
        assert!((x - linear).abs() <= 0.01 * linear);
        let mut prev = 0.0;
        for k in 1..=40 {
            let x = classic_wise_coord(sigma, alpha, r, eta, k as f64 * 0.5).unwrap();
            assert!(x > prev && x < sigma);
            prev = x;
        }
        assert!(classic_wise_coord(-1.0, 2.0, 2, 0.1, 1.0).is_err());
    }

    #[test]
    fn state_integration_agrees_and_conserves() {
        let (sigma, alpha, r, eta) = (5.0, 2.0, 2, 0.05);
        let c0 = conserved_quantity(0.0, 1.0, 0.0);
        assert_eq!(c0, 1.0);
        assert_eq!(conserved_quantity(0.0, 0.0, 0.0), 0.0);
        for time in [0.5, 3.0, 20.0] {
            let (x, y, z) = classic_wise_state(sigma, alpha, r, eta, time, Side::Rsi);
            let xo = classic_wise_coord(sigma, alpha, r, eta, time).unwrap();
            assert!((x - xo).abs() < 1e-9 * sigma);
            assert!((conserved_quantity(x, y, z) - c0).abs() < 1e-9);
            assert!((y * z - x * x).abs() < 1e-9 * x * x.max(1.0));
        }
    }

    #[test]
    fn lower_bound_examples() {
        assert!((lower_bound_random(&Preset::M1.target(), 2, Side::Lsi).unwrap().value - 5.625).abs() < 1e-12);
        assert!((lower_bound_random(&Preset::M2.target(), 2, Side::Lsi).unwrap().value - 304.6875).abs() < 1e-10);
        assert!((lower_bound_random(&Preset::MGeo.target(), 2, Side::Rsi).unwrap().value - 0.6250).abs() < 1e-6);
        assert!(lower_bound_random(&Preset::M1.target(), 33, Side::Lsi).is_err());
    }

    #[test]
    fn hrp_bound_examples() {
        let m1 = upper_bound_hrp(&Preset::M1.target(), 2, 6).unwrap();
        assert!((m1.value - 8.875).abs() < 1e-12);
        assert!(m1.note.is_some());
        let geo = upper_bound_hrp(&Preset::MGeo.target(), 2, 8).unwrap();
        assert!((geo.value - 0.58331).abs() < 1e-5);
        assert!(geo.note.is_none());
        let rank2 = FactorTarget::new(Matrix::from_diag(8, 8, &[2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let same = upper_bound_hrp(&rank2, 2, 2).unwrap().value;
        assert!((same - lower_bound_random(&rank2, 2, Side::Rsi).unwrap().value).abs() < 1e-12);
        assert!(upper_bound_hrp(&rank2, 3, 2).is_err());
    }

    #[test]
    fn trap_floor_examples() {
        let m2 = Preset::M2.target();
        assert!((trap_loss_floor(&m2, 2, 1).unwrap() - 214.5).abs() < 1e-10);
        assert!((trap_loss_floor(&m2, 2, 2).unwrap() - 203.0).abs() < 1e-10);
        let m1 = Preset::M1.target();
        assert!((trap_loss_floor(&m1, 2, 1).unwrap() - 5.0).abs() < 1e-12);
        assert!(trap_loss_floor(&m2, 2, 3).is_err());
    }
}
