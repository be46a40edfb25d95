//! Seed derivation for independent, reproducible random streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags; each (seed, tag, sub) triple is an independent stream.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const COINS: u64 = 3;
    pub const EPISODES: u64 = 4;
    pub const VAL_SUBSET: u64 = 5;
    pub const INVENTORY: u64 = 10;
    pub const SPEAKER: u64 = 20;
    pub const SPLIT: u64 = 30;
    pub const LEARNER: u64 = 40;
}

/// Deterministic ChaCha stream for `(seed, tag, sub)`.
pub fn stream(seed: u64, tag: u64, sub: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&tag.to_le_bytes());
    bytes[16..24].copy_from_slice(&sub.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x6d65_7461_7361_7421u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}
