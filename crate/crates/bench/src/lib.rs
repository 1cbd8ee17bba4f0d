//! Shared fixtures for the benchmarks.

use zidrm_core::simulation::generate;
use zidrm_core::{MixtureScenario, TwoSampleData};

/// One draw from preset `model` at sizes `(n, n)`, fixed seed.
pub fn sample(model: usize, n: usize) -> TwoSampleData {
    let s = MixtureScenario::preset(model, [n, n]).expect("preset exists");
    generate(&s, 2024, 0).expect("valid scenario")
}
