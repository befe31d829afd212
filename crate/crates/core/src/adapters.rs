//! LoRA adapter state, initialization schemes, the discrete update rule and
//! the factorization training loop.
//!
//! The effective update is `X = (α/r)·B·Aᵀ` with `A ∈ ℝ^{a×r}` and
//! `B ∈ ℝ^{b×r}`. One step reads both factors before writing either:
//!
//! ```text
//! A⁺ = A − η_A · Gᵀ · B
//! B⁺ = B − η_B · G · A
//! ```
//!
//! where `G` already carries the `α/r` factor (see [`crate::objective::gradient`]).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hrp::{self, HrpConfig};
use crate::linalg::{gaussian_matrix, random_orthogonal, Matrix, RngState};
use crate::objective::{self, FactorTarget};

/// Loss above which training is aborted as divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Which factor starts at zero. LSI: `A₀ = 0`, `B₀` random. RSI: `B₀ = 0`,
/// `A₀` random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lsi,
    Rsi,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Lsi => Side::Rsi,
            Side::Rsi => Side::Lsi,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lsi => "lsi",
            Side::Rsi => "rsi",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsi" => Ok(Side::Lsi),
            "rsi" => Ok(Side::Rsi),
            other => Err(invalid(format!("unknown side {other:?}"))),
        }
    }
}

/// Adapter factors and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub a: Matrix,
    pub b: Matrix,
    pub alpha: f64,
    /// Zero-initialized side when the pair came from a zero+random style
    /// scheme; decides which factor an asymmetric update freezes.
    pub orientation: Option<Side>,
}

impl AdapterPair {
    pub fn new(a: Matrix, b: Matrix, alpha: f64) -> Result<Self> {
        if a.cols() != b.cols() || a.cols() == 0 {
            return Err(Error::Shape {
                op: "adapter pair",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        let orientation = match (a.is_zero(), b.is_zero()) {
            (true, false) => Some(Side::Lsi),
            (false, true) => Some(Side::Rsi),
            _ => None,
        };
        Ok(Self { a, b, alpha, orientation })
    }

    pub fn with_orientation(mut self, side: Side) -> Self {
        self.orientation = Some(side);
        self
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// `α/r`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// `(α/r)·A·Aᵀ`.
    pub fn y(&self) -> Matrix {
        self.a.matmul_tr(&self.a).expect("square").scale(self.scale())
    }

    /// `(α/r)·B·Bᵀ`.
    pub fn z(&self) -> Matrix {
        self.b.matmul_tr(&self.b).expect("square").scale(self.scale())
    }
}

/// `(α/r)·B·Aᵀ`.
pub fn effective_delta(pair: &AdapterPair) -> Matrix {
    pair.b.matmul_tr(&pair.a).expect("adapter ranks agree").scale(pair.scale())
}

/// Initialization scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    ZeroPlusGaussian { side: Side, sigma: f64 },
    ZeroPlusOrthogonal { side: Side },
    /// Random side replaced by the leading singular vectors of the target.
    TargetSvd { side: Side },
    Explicit { a0: Matrix, b0: Matrix },
    /// High-rank preheating; the main-run side is `config.orientation`.
    HrpDerived(HrpConfig),
}

/// Learning-rate assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateVariant {
    /// `η_A = η_B = η`.
    Classic { eta: f64 },
    /// The random-initialized side is frozen: `η_B = 0` for LSI and
    /// `η_A = 0` for RSI.
    Asymmetric { eta: f64 },
    General { eta_a: f64, eta_b: f64 },
}

impl UpdateVariant {
    /// `(η_A, η_B)` for a pair with the given orientation.
    pub fn rates(&self, orientation: Option<Side>) -> Result<(f64, f64)> {
        let (ea, eb) = match *self {
            UpdateVariant::Classic { eta } => (eta, eta),
            UpdateVariant::Asymmetric { eta } => match orientation {
                Some(Side::Lsi) => (eta, 0.0),
                Some(Side::Rsi) => (0.0, eta),
                None => return Err(invalid("asymmetric update needs a zero+random oriented pair")),
            },
            UpdateVariant::General { eta_a, eta_b } => (eta_a, eta_b),
        };
        if !(ea >= 0.0 && eb >= 0.0 && ea.is_finite() && eb.is_finite()) {
            return Err(invalid(format!("learning rates must be finite and >= 0, got ({ea}, {eb})")));
        }
        Ok((ea, eb))
    }

    pub fn eta(&self) -> f64 {
        match *self {
            UpdateVariant::Classic { eta } | UpdateVariant::Asymmetric { eta } => eta,
            UpdateVariant::General { eta_a, eta_b } => eta_a.max(eta_b),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            UpdateVariant::Classic { .. } => "classic",
            UpdateVariant::Asymmetric { .. } => "asymmetric",
            UpdateVariant::General { .. } => "general",
        }
    }
}

/// Whether `B` sees the already-updated `A` within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    Simultaneous,
    Sequential,
}

/// Builds the initial adapter pair.
pub fn initialize(
    spec: &InitSpec,
    a: usize,
    b: usize,
    r: usize,
    alpha: f64,
    target: Option<&FactorTarget>,
    rng: &mut RngState,
) -> Result<AdapterPair> {
    if r == 0 || r > a.min(b) {
        return Err(invalid(format!("rank {r} must be in 1..={}", a.min(b))));
    }
    let zero_plus = |side: Side, random_a: Matrix, random_b: Matrix| -> Result<AdapterPair> {
        let pair = match side {
            Side::Lsi => AdapterPair::new(Matrix::zeros(a, r), random_b, alpha)?,
            Side::Rsi => AdapterPair::new(random_a, Matrix::zeros(b, r), alpha)?,
        };
        Ok(pair.with_orientation(side))
    };
    match spec {
        InitSpec::ZeroPlusGaussian { side, sigma } => {
            let (ra, rb) = match side {
                Side::Lsi => (Matrix::zeros(a, r), gaussian_matrix(b, r, *sigma, rng)?),
                Side::Rsi => (gaussian_matrix(a, r, *sigma, rng)?, Matrix::zeros(b, r)),
            };
            zero_plus(*side, ra, rb)
        }
        InitSpec::ZeroPlusOrthogonal { side } => {
            let (ra, rb) = match side {
                Side::Lsi => (Matrix::zeros(a, r), random_orthogonal(b, r, rng)?),
                Side::Rsi => (random_orthogonal(a, r, rng)?, Matrix::zeros(b, r)),
            };
            zero_plus(*side, ra, rb)
        }
        InitSpec::TargetSvd { side } => {
            let target = require_target(target, a, b)?;
            let svd = target.svd();
            zero_plus(*side, svd.v.columns_range(0, r), svd.u.columns_range(0, r))
        }
        InitSpec::Explicit { a0, b0 } => {
            if a0.shape() != (a, r) || b0.shape() != (b, r) {
                return Err(Error::Shape {
                    op: "explicit init",
                    lhs: a0.shape(),
                    rhs: b0.shape(),
                });
            }
            AdapterPair::new(a0.clone(), b0.clone(), alpha)
        }
        InitSpec::HrpDerived(cfg) => {
            let target = require_target(target, a, b)?;
            hrp::hrp_initialize(target, cfg, r, alpha, rng)
        }
    }
}

fn require_target(target: Option<&FactorTarget>, a: usize, b: usize) -> Result<&FactorTarget> {
    let target = target.ok_or_else(|| invalid("this initialization scheme needs a target"))?;
    if (target.b(), target.a()) != (b, a) {
        return Err(Error::Shape {
            op: "init target",
            lhs: (b, a),
            rhs: target.matrix().shape(),
        });
    }
    Ok(target)
}

/// One simultaneous update from gradient `g` (b × a, already scaled by α/r).
pub fn step(pair: &AdapterPair, g: &Matrix, variant: &UpdateVariant) -> Result<AdapterPair> {
    let (eta_a, eta_b) = variant.rates(pair.orientation)?;
    if g.shape() != (pair.b.rows(), pair.a.rows()) {
        return Err(Error::Shape {
            op: "adapter step",
            lhs: g.shape(),
            rhs: (pair.b.rows(), pair.a.rows()),
        });
    }
    let mut next = pair.clone();
    if eta_a != 0.0 {
        next.a.axpy(-eta_a, &g.tr_matmul(&pair.b)?)?;
    }
    if eta_b != 0.0 {
        next.b.axpy(-eta_b, &g.matmul(&pair.a)?)?;
    }
    Ok(next)
}

/// One recorded point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    pub loss_gap: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
}

/// Recorded `(step, loss, loss_gap)` sequence with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TrajectoryRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(invalid(format!(
                    "trajectory steps must increase: {} after {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn final_loss(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Trainer settings beyond the variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub steps: usize,
    pub record_stride: usize,
    pub order: UpdateOrder,
}

impl Schedule {
    pub fn new(steps: usize, record_stride: usize) -> Self {
        Self {
            steps,
            record_stride,
            order: UpdateOrder::Simultaneous,
        }
    }

    pub fn records_step(&self, step: usize) -> bool {
        step == 0 || step == self.steps || step.is_multiple_of(self.record_stride)
    }
}

/// Plain gradient descent on `½‖X − M‖²`.
pub fn train(
    target: &FactorTarget,
    pair: AdapterPair,
    variant: &UpdateVariant,
    steps: usize,
    record_stride: usize,
) -> Result<(AdapterPair, Trajectory)> {
    train_observed(target, pair, variant, Schedule::new(steps, record_stride), |_, _| {})
}

/// [`train`] with an observer called on every recorded step.
pub fn train_observed(
    target: &FactorTarget,
    mut pair: AdapterPair,
    variant: &UpdateVariant,
    schedule: Schedule,
    mut observer: impl FnMut(usize, &AdapterPair),
) -> Result<(AdapterPair, Trajectory)> {
    if schedule.record_stride == 0 {
        return Err(invalid("record_stride must be at least 1"));
    }
    let r = pair.rank();
    let floor = objective::optimal_loss(target, r)?;
    let mut trajectory = Trajectory::new();
    for k in 0..=schedule.steps {
        let x = effective_delta(&pair);
        let residual = x.try_sub(target.matrix())?;
        let loss = 0.5 * residual.frobenius_norm_sq();
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { step: k, loss });
        }
        if schedule.records_step(k) {
            let c = pair.scale();
            let mut diagnostics = BTreeMap::new();
            diagnostics.insert("trace_y".to_string(), c * pair.a.frobenius_norm_sq());
            diagnostics.insert("trace_z".to_string(), c * pair.b.frobenius_norm_sq());
            trajectory.push(TrajectoryRecord {
                step: k,
                loss,
                loss_gap: loss - floor,
                diagnostics,
            })?;
            observer(k, &pair);
        }
        if k == schedule.steps {
            break;
        }
        let g = residual.scale(pair.scale());
        pair = match schedule.order {
            UpdateOrder::Simultaneous => step(&pair, &g, variant)?,
            UpdateOrder::Sequential => sequential_step(target, &pair, &g, variant)?,
        };
    }
    Ok((pair, trajectory))
}

fn sequential_step(
    target: &FactorTarget,
    pair: &AdapterPair,
    g: &Matrix,
    variant: &UpdateVariant,
) -> Result<AdapterPair> {
    let (eta_a, eta_b) = variant.rates(pair.orientation)?;
    let mut next = pair.clone();
    next.a.axpy(-eta_a, &g.tr_matmul(&pair.b)?)?;
    let g_mid = objective::gradient(&effective_delta(&next), target, next.alpha, next.rank())?;
    next.b.axpy(-eta_b, &g_mid.matmul(&next.a)?)?;
    Ok(next)
}
