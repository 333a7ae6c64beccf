//! Fixtures shared by the benchmarks.

use opcwalk_core::{condition_on_origin, EnvironmentHandle, LatticeConfig, WeightFieldSpec};

/// An environment with the origin in the backbone.
pub fn conditioned(d: usize, p: f64, spec: &WeightFieldSpec, seed: u64) -> EnvironmentHandle {
    condition_on_origin(seed, LatticeConfig::new(d, p), spec, 100_000).expect("supercritical p").env
}

/// Two-state time-Markov weights used by the quenched experiments.
pub fn markov_weights() -> WeightFieldSpec {
    WeightFieldSpec::two_state_markov(1.0, 3.0, 0.9)
}
