//! Deterministic keyed sub-streams.
//!
//! Every random draw in the crate is keyed by `(seed, role, indices...)`
//! through a SplitMix64 absorption into a ChaCha stream, so any evaluation
//! order — sequential, parallel, re-run — produces identical values.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream roles; distinct constants keep sub-streams disjoint.
pub mod role {
    pub const TRUTH: u64 = 1;
    pub const OBS: u64 = 2;
    pub const INFO: u64 = 3;
    pub const MEMBER: u64 = 4;
    pub const PIT: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit key by absorbing the words in order.
pub fn derive_key(words: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        state = splitmix64(state ^ w);
    }
    state
}

/// A ChaCha stream for the given key words.
pub fn stream(words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(words))
}
