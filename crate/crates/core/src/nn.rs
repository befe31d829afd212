//! Toy teacher–student linear fine-tuning task.
//!
//! A frozen `W_pre` is adapted toward `W_pre + ΔW` from noisy samples
//! `y = (W_pre + ΔW)·x + ε`. The loss is `(1/2n)·Σ‖W·x_j − y_j‖²`.
//! Full-batch gradients use the cached moments `Sxx = XᵀX/n` and
//! `Syx = YᵀX/n`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::{self, AdapterPair, Side, Trajectory, TrajectoryRecord, UpdateVariant, DIVERGENCE_LOSS};
use crate::error::{invalid, Error, Result};
use crate::hrp::{self, HrpConfig};
use crate::linalg::{gaussian_matrix, random_orthogonal, svd, sym_eigen, Matrix, RngState};
use crate::verify::{run_trials, McStats};

/// Generated regression task.
#[derive(Debug, Clone)]
pub struct LinearTask {
    pub w_pre: Matrix,
    pub delta_true: Matrix,
    /// `n × a`, one sample per row.
    pub inputs: Matrix,
    /// `n × b`.
    pub targets: Matrix,
    pub noise_sigma: f64,
    pub rank_star: usize,
    sxx: Matrix,
    syx: Matrix,
    best_loss: f64,
}

impl LinearTask {
    pub fn a(&self) -> usize {
        self.w_pre.cols()
    }

    pub fn b(&self) -> usize {
        self.w_pre.rows()
    }

    pub fn n(&self) -> usize {
        self.inputs.rows()
    }

    /// `XᵀX/n`.
    pub fn sxx(&self) -> &Matrix {
        &self.sxx
    }

    /// `(1/2n)·Σ‖W·x_j − y_j‖²` over the full dataset.
    pub fn loss(&self, w: &Matrix) -> Result<f64> {
        let pred = self.inputs.matmul_tr(w)?;
        Ok(0.5 * pred.try_sub(&self.targets)?.frobenius_norm_sq() / self.n() as f64)
    }

    /// `W·Sxx − Syx`, the full-batch gradient.
    pub fn full_gradient(&self, w: &Matrix) -> Result<Matrix> {
        w.matmul(&self.sxx)?.try_sub(&self.syx)
    }

    /// Loss of the unconstrained least-squares weight.
    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// `ΔW = Σ_{i≤rank_star} 2^{1−i}·u_i·v_iᵀ` with random orthonormal `u, v`,
/// Gaussian inputs and `N(0, noise_sigma²)` target noise.
pub fn make_task(a: usize, b: usize, rank_star: usize, n: usize, noise_sigma: f64, rng: &mut RngState) -> Result<LinearTask> {
    if a == 0 || b == 0 || n == 0 {
        return Err(invalid(format!("task dimensions must be positive, got a={a} b={b} n={n}")));
    }
    if rank_star == 0 || rank_star > a.min(b) {
        return Err(invalid(format!("rank_star {rank_star} must be in 1..={}", a.min(b))));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let w_pre = gaussian_matrix(b, a, 1.0 / (a as f64).sqrt(), rng)?;
    let u = random_orthogonal(b, rank_star, rng)?;
    let v = random_orthogonal(a, rank_star, rng)?;
    let mut us = u.clone();
    for i in 0..rank_star {
        let s = 0.5f64.powi(i as i32);
        for row in 0..b {
            us[(row, i)] *= s;
        }
    }
    let delta_true = us.matmul_tr(&v)?;
    let inputs = gaussian_matrix(n, a, 1.0, rng)?;
    let mut targets = inputs.matmul_tr(&w_pre.try_add(&delta_true)?)?;
    if noise_sigma > 0.0 {
        targets.axpy(1.0, &gaussian_matrix(n, b, noise_sigma, rng)?)?;
    }
    let inv_n = 1.0 / n as f64;
    let sxx = inputs.tr_matmul(&inputs)?.scale(inv_n);
    let syx = targets.tr_matmul(&inputs)?.scale(inv_n);
    let mut task = LinearTask {
        w_pre,
        delta_true,
        inputs,
        targets,
        noise_sigma,
        rank_star,
        sxx,
        syx,
        best_loss: 0.0,
    };
    task.best_loss = least_squares_loss(&task)?;
    Ok(task)
}

fn least_squares_loss(task: &LinearTask) -> Result<f64> {
    let eig = sym_eigen(&task.sxx)?;
    let floor = eig.values[0] * 1e-12;
    let pinv = eig.apply_fn(|l| if l > floor { 1.0 / l } else { 0.0 });
    task.loss(&task.syx.matmul(&pinv)?)
}

/// Adapter on top of a frozen weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinearModel {
    pub w_pre: Matrix,
    pub pair: AdapterPair,
    /// Subtracted from `w_pre`; nonzero only for residual-style baselines.
    pub w_init_offset: Matrix,
}

impl LoraLinearModel {
    /// `W_pre − offset + (α/r)·B·Aᵀ`.
    pub fn effective_weight(&self) -> Matrix {
        let mut w = self.w_pre.try_sub(&self.w_init_offset).expect("offset shape checked at construction");
        w.axpy(1.0, &adapters::effective_delta(&self.pair)).expect("adapter shape checked at construction");
        w
    }
}

/// `(1/|batch|)·Σ_j (W_eff·x_j − y_j)·x_jᵀ`.
pub fn batch_gradient(model: &LoraLinearModel, task: &LinearTask, batch: &[usize]) -> Result<Matrix> {
    weight_gradient(&model.effective_weight(), task, batch)
}

fn weight_gradient(w: &Matrix, task: &LinearTask, batch: &[usize]) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(invalid("batch must not be empty"));
    }
    if batch.len() == task.n() {
        return task.full_gradient(w);
    }
    let (a, b) = (task.a(), task.b());
    let mut g = Matrix::zeros(b, a);
    let mut resid = vec![0.0; b];
    for &j in batch {
        let x = task.inputs.row(j);
        let y = task.targets.row(j);
        for (i, r) in resid.iter_mut().enumerate() {
            *r = w.row(i).iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - y[i];
        }
        for (i, &r) in resid.iter().enumerate() {
            for (k, &xk) in x.iter().enumerate() {
                g[(i, k)] += r * xk;
            }
        }
    }
    Ok(g.scale(1.0 / batch.len() as f64))
}

fn sample_batch(task: &LinearTask, batch_size: usize, rng: &mut RngState) -> Vec<usize> {
    if batch_size >= task.n() {
        (0..task.n()).collect()
    } else {
        rng.sample_indices(task.n(), batch_size)
    }
}

/// Initializers compared on the toy task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnInit {
    ZeroPlusGaussian,
    ZeroPlusOrthogonal,
    PissaLike,
    GradSvd,
    Hrp,
}

impl NnInit {
    pub const ALL: [NnInit; 5] = [
        NnInit::ZeroPlusGaussian,
        NnInit::ZeroPlusOrthogonal,
        NnInit::PissaLike,
        NnInit::GradSvd,
        NnInit::Hrp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NnInit::ZeroPlusGaussian => "zero_plus_gaussian",
            NnInit::ZeroPlusOrthogonal => "zero_plus_orthogonal",
            NnInit::PissaLike => "pissa_like",
            NnInit::GradSvd => "grad_svd",
            NnInit::Hrp => "hrp",
        }
    }
}

impl fmt::Display for NnInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NnInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NnInit::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| invalid(format!("unknown nn initializer {s:?}")))
    }
}

/// Adapter shape and initializer knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnInitParams {
    pub r: usize,
    pub alpha: f64,
    pub side: Side,
    /// Gaussian scale for the random side; `None` means `1/√a`.
    pub gaussian_sigma: Option<f64>,
    pub hrp: HrpConfig,
}

/// Top-`r` factors split as `U_r√Σ_r/√c` and `V_r√Σ_r/√c`, plus the
/// offset `U_rΣ_rV_rᵀ` they reproduce.
fn residual_pair(m: &Matrix, r: usize, alpha: f64, what: &str, sign: f64) -> Result<(AdapterPair, Matrix)> {
    let dec = svd(m)?;
    let top = dec.s.first().copied().unwrap_or(0.0);
    if dec.s.len() < r || dec.s[r - 1] <= 1e-10 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient(format!(
            "{what} has numerical rank below r = {r} (singular values {:?})",
            &dec.s[..r.min(dec.s.len())]
        )));
    }
    let c = alpha / r as f64;
    let mut a0 = dec.v.columns_range(0, r);
    let mut b0 = dec.u.columns_range(0, r);
    for i in 0..r {
        let w = (dec.s[i] / c).sqrt();
        for row in 0..a0.rows() {
            a0[(row, i)] *= w;
        }
        for row in 0..b0.rows() {
            b0[(row, i)] *= sign * w;
        }
    }
    let pair = AdapterPair::new(a0, b0, alpha)?;
    let offset = adapters::effective_delta(&pair);
    Ok((pair, offset))
}

pub fn initialize_nn(init: NnInit, task: &LinearTask, params: &NnInitParams, rng: &mut RngState) -> Result<LoraLinearModel> {
    let (a, b, r, alpha) = (task.a(), task.b(), params.r, params.alpha);
    if r == 0 || r > a.min(b) {
        return Err(invalid(format!("rank {r} must be in 1..={}", a.min(b))));
    }
    let zero_offset = Matrix::zeros(b, a);
    let (pair, w_init_offset) = match init {
        NnInit::ZeroPlusGaussian => {
            let sigma = params.gaussian_sigma.unwrap_or(1.0 / (a as f64).sqrt());
            let spec = adapters::InitSpec::ZeroPlusGaussian { side: params.side, sigma };
            (adapters::initialize(&spec, a, b, r, alpha, None, rng)?, zero_offset)
        }
        NnInit::ZeroPlusOrthogonal => {
            let spec = adapters::InitSpec::ZeroPlusOrthogonal { side: params.side };
            (adapters::initialize(&spec, a, b, r, alpha, None, rng)?, zero_offset)
        }
        NnInit::PissaLike => residual_pair(&task.w_pre, r, alpha, "w_pre", 1.0)?,
        NnInit::GradSvd => {
            let g = task.full_gradient(&task.w_pre)?;
            let dec = svd(&g)?;
            let top = dec.s.first().copied().unwrap_or(0.0);
            if dec.s[r - 1] <= 1e-10 * top.max(f64::MIN_POSITIVE) {
                return Err(Error::RankDeficient(format!(
                    "gradient at w_pre has numerical rank below r = {r}"
                )));
            }
            let pair = AdapterPair::new(dec.v.columns_range(0, r), dec.u.columns_range(0, r).scale(-1.0), alpha)?;
            let offset = adapters::effective_delta(&pair);
            (pair, offset)
        }
        NnInit::Hrp => {
            let batch = params.hrp.hrp_batch.unwrap_or(task.n());
            let mut batch_rng = rng.fork();
            let w_pre = &task.w_pre;
            let result = hrp::preheat_with(a, b, &params.hrp, r, alpha, rng, |x| {
                let w = w_pre.try_add(x)?;
                let idx = sample_batch(task, batch, &mut batch_rng);
                weight_gradient(&w, task, &idx)
            })?;
            let pair = hrp::pair_from_directions(&result.extracted_directions, params.hrp.orientation, a, b, alpha)?;
            (pair, zero_offset)
        }
    };
    Ok(LoraLinearModel {
        w_pre: task.w_pre.clone(),
        pair,
        w_init_offset,
    })
}

/// Minibatch gradient descent on the adapter pair (classic update),
/// recording the full-dataset loss.
pub fn train_nn(
    mut model: LoraLinearModel,
    task: &LinearTask,
    eta: f64,
    steps: usize,
    batch_size: usize,
    record_stride: usize,
    rng: &mut RngState,
) -> Result<(LoraLinearModel, Trajectory)> {
    if batch_size == 0 || batch_size > task.n() {
        return Err(invalid(format!("batch_size must be in 1..={}", task.n())));
    }
    if record_stride == 0 {
        return Err(invalid("record_stride must be at least 1"));
    }
    let variant = UpdateVariant::Classic { eta };
    let mut trajectory = Trajectory::new();
    for k in 0..=steps {
        let record = k == 0 || k == steps || k % record_stride == 0;
        let w = model.effective_weight();
        if record {
            let loss = task.loss(&w)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Divergence { step: k, loss });
            }
            trajectory.push(TrajectoryRecord {
                step: k,
                loss,
                loss_gap: loss - task.best_loss(),
                diagnostics: Default::default(),
            })?;
        }
        if k == steps {
            break;
        }
        let idx = sample_batch(task, batch_size, rng);
        let g = weight_gradient(&w, task, &idx)?.scale(model.pair.scale());
        if !g.is_finite() {
            return Err(Error::Divergence { step: k, loss: f64::NAN });
        }
        model.pair = adapters::step(&model.pair, &g, &variant)?;
    }
    Ok((model, trajectory))
}

/// Comparison settings; defaults are the desk-scale task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSettings {
    pub a: usize,
    pub b: usize,
    pub rank_star: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub r: usize,
    pub alpha: f64,
    pub side: Side,
    pub gaussian_sigma: Option<f64>,
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub record_stride: usize,
    pub hrp: HrpConfig,
    pub inits: Vec<NnInit>,
}

impl Default for NnSettings {
    fn default() -> Self {
        let mut hrp = HrpConfig::new(16, 100, 1.0);
        hrp.hrp_batch = Some(64);
        Self {
            a: 64,
            b: 64,
            rank_star: 4,
            n: 2048,
            noise_sigma: 0.01,
            r: 4,
            alpha: 4.0,
            side: Side::Rsi,
            gaussian_sigma: None,
            eta: 0.05,
            steps: 1000,
            batch_size: 64,
            record_stride: 50,
            hrp,
            inits: NnInit::ALL.to_vec(),
        }
    }
}

impl NnSettings {
    pub fn init_params(&self) -> NnInitParams {
        NnInitParams {
            r: self.r,
            alpha: self.alpha,
            side: self.side,
            gaussian_sigma: self.gaussian_sigma,
            hrp: self.hrp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inits.is_empty() {
            return Err(invalid("nn.inits must list at least one initializer"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("nn.eta must be >= 0, got {}", self.eta)));
        }
        if self.batch_size == 0 || self.batch_size > self.n {
            return Err(invalid(format!("nn.batch_size must be in 1..={}", self.n)));
        }
        if self.r == 0 || self.r > self.a.min(self.b) {
            return Err(invalid(format!("nn.r must be in 1..={}", self.a.min(self.b))));
        }
        if self.inits.contains(&NnInit::Hrp) {
            self.hrp.validate(self.r, self.a, self.b)?;
        }
        Ok(())
    }
}

/// Per-initializer outcome over all seeds.
#[derive(Debug, Clone)]
pub struct NnOutcome {
    pub init: NnInit,
    pub final_losses: McStats,
    /// One trajectory per seed, in seed order.
    pub trajectories: Vec<Trajectory>,
}

/// Runs every initializer on `n_seeds` tasks. Seed `k` owns the task; each
/// initializer draws from its own stream so adding or removing one does not
/// perturb the others.
pub fn run_comparison(settings: &NnSettings, n_seeds: usize, master_seed: u64) -> Result<Vec<NnOutcome>> {
    settings.validate()?;
    let params = settings.init_params();
    let per_seed = run_trials(n_seeds, master_seed, |k, rng| {
        let task = make_task(settings.a, settings.b, settings.rank_star, settings.n, settings.noise_sigma, rng)?;
        settings
            .inits
            .iter()
            .map(|&init| {
                let mut init_rng = RngState::with_stream(master_seed.wrapping_add(1 + init as u64), k as u64);
                let model = initialize_nn(init, &task, &params, &mut init_rng)?;
                let (_, traj) = train_nn(model, &task, settings.eta, settings.steps, settings.batch_size, settings.record_stride, &mut init_rng)?;
                Ok(traj)
            })
            .collect::<Result<Vec<_>>>()
    });
    let per_seed = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    settings
        .inits
        .iter()
        .enumerate()
        .map(|(j, &init)| {
            let trajectories: Vec<Trajectory> = per_seed.iter().map(|runs| runs[j].clone()).collect();
            let finals = trajectories.iter().map(Trajectory::final_loss).collect();
            Ok(NnOutcome {
                init,
                final_losses: McStats::from_values(finals)?,
                trajectories,
            })
        })
        .collect()
}
