//! Shared fixtures for the criterion benchmarks.

use lowrank_core::adapters::{initialize, AdapterPair, InitSpec, Side};
use lowrank_core::linalg::gaussian_matrix;
use lowrank_core::{FactorTarget, Matrix, Preset, RngState};

/// Square Gaussian matrix of side `n`.
pub fn square(n: usize, seed: u64) -> Matrix {
    gaussian_matrix(n, n, 1.0, &mut RngState::new(seed)).expect("positive sigma")
}

/// Preset target with a fresh RSI Gaussian rank-`r` pair.
pub fn preset_run(preset: Preset, r: usize, seed: u64) -> (FactorTarget, AdapterPair) {
    let target = preset.target();
    let pair = initialize(
        &InitSpec::ZeroPlusGaussian { side: Side::Rsi, sigma: 1.0 },
        target.a(),
        target.b(),
        r,
        r as f64,
        None,
        &mut RngState::new(seed),
    )
    .expect("valid rank");
    (target, pair)
}
