//! Shared fixtures for the criterion benchmarks.

use qkdsim_core::bb84::OpticsImperfection;
use qkdsim_core::random::task_rng;
use qkdsim_core::{BitString, LinkSpec, Preset, SourceSpec};
use rand::Rng;

/// Preset source on the default link with misalignment calibrated to 3 % QBER.
pub fn testbed(preset: Preset) -> (SourceSpec, LinkSpec, OpticsImperfection) {
    let source = preset.source();
    let link = LinkSpec::default();
    let imp = OpticsImperfection::calibrated(0.03, source.mu, &link).expect("preset calibrates");
    (source, link, imp)
}

/// Random key of `n` bits and a copy with independent bit flips at rate `qber`.
pub fn noisy_pair(n: usize, qber: f64, seed: u64) -> (BitString, BitString) {
    let mut rng = task_rng(seed, 0);
    let alice = BitString::from_bools((0..n).map(|_| rng.random::<bool>()));
    let bob = BitString::from_bools(alice.iter().map(|b| b ^ rng.random_bool(qber)));
    (alice, bob)
}
