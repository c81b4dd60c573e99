//! Deterministic RNG streams.
//!
//! Every stochastic component of the lab draws from a `ChaCha8Rng` derived
//! from a base seed plus a handful of stream indices, so independent workers
//! (users, Monte-Carlo trials, clients) can run in parallel without sharing
//! mutable RNG state and still reproduce bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to spread structured stream indices over u64.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from a base seed and up to three indices.
pub fn stream(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    s = splitmix64(s ^ a.wrapping_mul(0xa076_1d64_78bd_642f));
    s = splitmix64(s ^ b.wrapping_mul(0xe703_7ed1_a0b4_28db));
    s = splitmix64(s ^ c.wrapping_mul(0x8ebc_6af0_9c88_c6e3));
    ChaCha8Rng::seed_from_u64(s)
}

/// Single-index convenience stream.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
