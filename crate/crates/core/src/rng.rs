//! Deterministic random-stream derivation.
//!
//! Every random draw inside a filter step comes from a ChaCha stream keyed
//! by the run seed and selected by `(step, anchor, purpose)`, so results do
//! not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    AgentPredict = 2,
    FeaturePredict = 3,
    NewFeatures = 4,
    Resample = 5,
    Intensity = 6,
    Measurements = 7,
}

/// Stream for one `(step, anchor, purpose)` triple.
pub fn stream(seed: u64, step: usize, anchor: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((step as u64) << 24) ^ ((anchor as u64 & 0xffff) << 8) ^ purpose as u64;
    rng.set_stream(id);
    rng
}

/// Stream for one `(step, anchor, purpose)` triple further selected by an
/// arbitrary `key`, such as a feature id or the bit pattern of a range.
pub fn keyed_stream(seed: u64, step: usize, anchor: usize, purpose: Purpose, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(seed, key as usize));
    let id = ((step as u64) << 24) ^ ((anchor as u64 & 0xffff) << 8) ^ purpose as u64;
    rng.set_stream(id);
    rng
}

/// Seed of run `run` within a batch seeded with `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(run as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
