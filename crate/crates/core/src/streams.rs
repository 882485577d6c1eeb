//! Deterministic RNG streams.
//!
//! Every stochastic draw in the crate comes from a ChaCha stream derived
//! from a single 64-bit seed plus a purpose tag, so scenarios, noise and
//! Monte Carlo trials replay bit-identically across runs and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for waypoint/trajectory sampling.
pub const TRAJECTORY: u64 = 0x74726a;
/// Stream tag for range noise synthesis.
pub const NOISE: u64 = 0x6e6f69;
/// Stream tag for per-trial seeds in Monte Carlo sweeps.
pub const TRIAL: u64 = 0x747269;

/// SplitMix64 finalizer; decorrelates nearby seeds and tags.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `(seed, tag)`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// A fresh deterministic generator for the given seed and purpose tag.
pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}
