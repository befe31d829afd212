//! JSON run configuration. Unknown keys are rejected and every numeric field
//! is range-checked before any compute starts.

use std::fs;
use std::path::{Path, PathBuf};

use lowrank_core::adapters::{InitSpec, Side, UpdateOrder, UpdateVariant};
use lowrank_core::nn::NnSettings;
use lowrank_core::verify::{
    ClosedFormSettings, ConservedSettings, HrpBoundSettings, LowerBoundSettings, SimilaritySettings, TrapSettings,
    WiseSettings,
};
use lowrank_core::{FactorTarget, HrpConfig, Matrix, Preset};
use serde::{Deserialize, Serialize};

/// Field-level configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetSpec,
    pub adapter: AdapterBlock,
    pub hrp: HrpBlock,
    pub nn: NnSettings,
    pub seeds: SeedBlock,
    pub output_dir: Option<PathBuf>,
    pub verify: VerifyBlock,
    pub figure1: Figure1Settings,
}

/// Either a named preset or an explicit `b × a` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub preset: Option<Preset>,
    pub matrix: Option<Matrix>,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            preset: Some(Preset::M1),
            matrix: None,
        }
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<FactorTarget, ConfigError> {
        match (&self.preset, &self.matrix) {
            (Some(p), None) => Ok(p.target()),
            (None, Some(m)) => FactorTarget::new(m.clone()).map_err(|e| bad("target.matrix", e)),
            _ => Err(bad("target", "set exactly one of `preset` or `matrix`")),
        }
    }

    pub fn label(&self) -> String {
        match &self.preset {
            Some(p) => p.to_string(),
            None => "matrix".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Classic,
    Asymmetric,
}

impl VariantKind {
    pub fn with_eta(self, eta: f64) -> UpdateVariant {
        match self {
            VariantKind::Classic => UpdateVariant::Classic { eta },
            VariantKind::Asymmetric => UpdateVariant::Asymmetric { eta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitBlock {
    Gaussian {
        #[serde(default = "rsi")]
        side: Side,
        #[serde(default = "one")]
        sigma: f64,
    },
    Orthogonal {
        #[serde(default = "rsi")]
        side: Side,
    },
    TargetSvd {
        #[serde(default = "rsi")]
        side: Side,
    },
    Hrp,
    Explicit {
        a0: Matrix,
        b0: Matrix,
    },
}

fn rsi() -> Side {
    Side::Rsi
}

fn one() -> f64 {
    1.0
}

impl InitBlock {
    pub fn label(&self) -> String {
        match self {
            InitBlock::Gaussian { side, .. } => format!("gaussian_{side}"),
            InitBlock::Orthogonal { side } => format!("orthogonal_{side}"),
            InitBlock::TargetSvd { side } => format!("target_svd_{side}"),
            InitBlock::Hrp => "hrp".to_string(),
            InitBlock::Explicit { .. } => "explicit".to_string(),
        }
    }

    pub fn spec(&self, hrp: HrpConfig) -> InitSpec {
        match self {
            InitBlock::Gaussian { side, sigma } => InitSpec::ZeroPlusGaussian { side: *side, sigma: *sigma },
            InitBlock::Orthogonal { side } => InitSpec::ZeroPlusOrthogonal { side: *side },
            InitBlock::TargetSvd { side } => InitSpec::TargetSvd { side: *side },
            InitBlock::Hrp => InitSpec::HrpDerived(hrp),
            InitBlock::Explicit { a0, b0 } => InitSpec::Explicit {
                a0: a0.clone(),
                b0: b0.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterBlock {
    pub r: usize,
    pub alpha: f64,
    pub variant: VariantKind,
    pub order: UpdateOrder,
    pub eta: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub inits: Vec<InitBlock>,
}

impl Default for AdapterBlock {
    fn default() -> Self {
        Self {
            r: 2,
            alpha: 2.0,
            variant: VariantKind::Classic,
            order: UpdateOrder::Simultaneous,
            eta: 0.01,
            steps: 1000,
            record_stride: 10,
            inits: vec![
                InitBlock::Gaussian { side: Side::Rsi, sigma: 1.0 },
                InitBlock::Orthogonal { side: Side::Rsi },
                InitBlock::Hrp,
                InitBlock::TargetSvd { side: Side::Rsi },
            ],
        }
    }
}

/// Preheating block; `hrp_lr` falls back to the main-run rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrpBlock {
    pub hrp_rank: usize,
    pub hrp_steps: usize,
    pub hrp_lr: Option<f64>,
    pub hrp_batch: Option<usize>,
    pub orientation: Side,
}

impl Default for HrpBlock {
    fn default() -> Self {
        Self {
            hrp_rank: 6,
            hrp_steps: 100,
            hrp_lr: None,
            hrp_batch: None,
            orientation: Side::Rsi,
        }
    }
}

impl HrpBlock {
    pub fn resolve(&self, main_eta: f64) -> HrpConfig {
        HrpConfig {
            hrp_rank: self.hrp_rank,
            hrp_steps: self.hrp_steps,
            hrp_lr: self.hrp_lr.unwrap_or(main_eta),
            hrp_batch: self.hrp_batch,
            orientation: self.orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedBlock {
    pub master_seed: u64,
    pub count: usize,
}

impl Default for SeedBlock {
    fn default() -> Self {
        Self { master_seed: 0, count: 1 }
    }
}

/// Per-suite check lists for `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub lower_bound: Vec<LowerBoundSettings>,
    /// Gaussian vs orthogonal frozen factor; part of the lower_bound suite.
    pub frozen_init: Vec<LowerBoundSettings>,
    pub trap: Vec<TrapSettings>,
    pub similarity: Vec<SimilaritySettings>,
    pub wise: Vec<WiseSettings>,
    pub closed_form: Vec<ClosedFormSettings>,
    pub hrp: Vec<HrpBoundSettings>,
    pub conserved: Vec<ConservedSettings>,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            lower_bound: vec![
                LowerBoundSettings::default(),
                LowerBoundSettings {
                    preset: Preset::M2,
                    ..LowerBoundSettings::default()
                },
            ],
            frozen_init: vec![LowerBoundSettings::default()],
            trap: vec![TrapSettings::default(), TrapSettings { i: 2, ..TrapSettings::default() }],
            similarity: vec![SimilaritySettings::default()],
            wise: vec![WiseSettings::default()],
            closed_form: vec![ClosedFormSettings::default()],
            hrp: vec![HrpBoundSettings::default(), HrpBoundSettings::figure1()],
            conserved: vec![ConservedSettings::default()],
        }
    }
}

/// Desk-scale loss-curve comparison on `M1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Settings {
    pub preset: Preset,
    pub r: usize,
    pub alpha: f64,
    pub eta: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub sigma: f64,
    pub side: Side,
    pub hrp: HrpConfig,
    pub n_seeds: usize,
}

impl Default for Figure1Settings {
    fn default() -> Self {
        Self {
            preset: Preset::M1,
            r: 2,
            alpha: 2.0,
            eta: 0.01,
            steps: 1000,
            record_stride: 10,
            sigma: 1.0 / (Preset::DIM as f64).sqrt(),
            side: Side::Rsi,
            hrp: HrpConfig::new(6, 100, 0.01),
            n_seeds: 20,
        }
    }
}

impl Figure1Settings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.r == 0 || self.r > Preset::DIM {
            return Err(bad("figure1.r", format!("must be in 1..={}", Preset::DIM)));
        }
        positive("figure1.alpha", self.alpha)?;
        positive("figure1.eta", self.eta)?;
        positive("figure1.sigma", self.sigma)?;
        if self.record_stride == 0 {
            return Err(bad("figure1.record_stride", "must be at least 1"));
        }
        if self.n_seeds < 2 {
            return Err(bad("figure1.n_seeds", "must be at least 2"));
        }
        let mut hrp = self.hrp;
        hrp.orientation = self.side;
        hrp.validate(self.r, Preset::DIM, Preset::DIM).map_err(|e| bad("figure1.hrp", e))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be a positive finite number, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Checks the blocks the factorization command uses.
    pub fn validate_factorize(&self) -> Result<FactorTarget, ConfigError> {
        let target = self.target.build()?;
        let ad = &self.adapter;
        let min_dim = target.min_dim();
        if ad.r == 0 || ad.r > min_dim {
            return Err(bad("adapter.r", format!("must be in 1..={min_dim}, got {}", ad.r)));
        }
        positive("adapter.alpha", ad.alpha)?;
        positive("adapter.eta", ad.eta)?;
        if ad.record_stride == 0 {
            return Err(bad("adapter.record_stride", "must be at least 1"));
        }
        if ad.inits.is_empty() {
            return Err(bad("adapter.inits", "must list at least one initialization"));
        }
        for (k, init) in ad.inits.iter().enumerate() {
            let field = format!("adapter.inits[{k}]");
            match init {
                InitBlock::Gaussian { sigma, .. } => positive(&format!("{field}.sigma"), *sigma)?,
                InitBlock::Hrp => {
                    if let Some(lr) = self.hrp.hrp_lr {
                        positive("hrp.hrp_lr", lr)?;
                    }
                    self.hrp
                        .resolve(ad.eta)
                        .validate(ad.r, target.a(), target.b())
                        .map_err(|e| bad("hrp", e))?;
                }
                InitBlock::Explicit { a0, b0 } => {
                    if a0.shape() != (target.a(), ad.r) || b0.shape() != (target.b(), ad.r) {
                        return Err(bad(
                            &field,
                            format!("a0 must be {}×{} and b0 {}×{}", target.a(), ad.r, target.b(), ad.r),
                        ));
                    }
                    if ad.variant == VariantKind::Asymmetric && !(a0.is_zero() ^ b0.is_zero()) {
                        return Err(bad(&field, "asymmetric updates need exactly one zero factor"));
                    }
                }
                _ => {}
            }
        }
        if self.seeds.count == 0 {
            return Err(bad("seeds.count", "must be at least 1"));
        }
        Ok(target)
    }

    pub fn validate_nn(&self) -> Result<(), ConfigError> {
        self.nn.validate().map_err(|e| bad("nn", e))?;
        if self.seeds.count < 2 {
            return Err(bad("seeds.count", "nn statistics need at least 2 seeds"));
        }
        Ok(())
    }

    pub fn validate_verify(&self) -> Result<(), ConfigError> {
        let v = &self.verify;
        for (k, s) in v.lower_bound.iter().enumerate() {
            if s.n_seeds < 2 {
                return Err(bad(&format!("verify.lower_bound[{k}].n_seeds"), "must be at least 2"));
            }
            positive(&format!("verify.lower_bound[{k}].eta"), s.eta)?;
        }
        for (k, s) in v.frozen_init.iter().enumerate() {
            if s.n_seeds < 2 {
                return Err(bad(&format!("verify.frozen_init[{k}].n_seeds"), "must be at least 2"));
            }
        }
        for (k, s) in v.hrp.iter().enumerate() {
            if s.n_seeds < 2 {
                return Err(bad(&format!("verify.hrp[{k}].n_seeds"), "must be at least 2"));
            }
            s.hrp
                .validate(s.r, Preset::DIM, Preset::DIM)
                .map_err(|e| bad(&format!("verify.hrp[{k}].hrp"), e))?;
        }
        for (k, s) in v.trap.iter().enumerate() {
            if s.i == 0 || s.i > s.r {
                return Err(bad(&format!("verify.trap[{k}].i"), format!("must be in 1..={}", s.r)));
            }
        }
        for (k, s) in v.closed_form.iter().enumerate() {
            positive(&format!("verify.closed_form[{k}].horizon"), s.horizon)?;
            if s.checkpoints == 0 {
                return Err(bad(&format!("verify.closed_form[{k}].checkpoints"), "must be at least 1"));
            }
        }
        Ok(())
    }
}
