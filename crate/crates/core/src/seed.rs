//! Seed derivation. Every random draw in the simulator comes from a ChaCha8
//! stream keyed by a base seed plus a path of tags, so results never depend
//! on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of tags into a child seed.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

/// Stable tag values for the independent random streams.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const POISON: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SGD: u64 = 5;
    pub const LINK: u64 = 6;
    pub const KEYS: u64 = 7;
    pub const BEHAVIOR: u64 = 8;
    pub const ACTIVITY: u64 = 9;
    pub const TEST_SPLIT: u64 = 10;
}
