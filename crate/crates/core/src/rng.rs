//! Deterministic random streams.
//!
//! Every sampling routine takes an explicit generator. Per-banner and
//! per-model streams are derived from one master seed so that any single
//! banner or model can be re-run in isolation and reproduce the same draws,
//! whatever the evaluation order or degree of parallelism.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Distinguishes independent uses of the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Simulation = 1,
    ModelZoo = 2,
    PairwiseMetric = 3,
    CounterfactualMetric = 4,
    Oracle = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream for `(seed, purpose, index)`.
pub fn derived(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((purpose as u64).wrapping_mul(GOLDEN)));
    rng.set_stream(index);
    rng
}

/// Stable 64-bit FNV-1a hash, used to key streams by banner id.
pub fn label_key(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
