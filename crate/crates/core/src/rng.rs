//! Seed derivation. Every stream in the simulator is keyed by the run seed
//! plus a fixed tag tuple, never by execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each tag in order.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream purposes, used as the first tag.
pub(crate) mod purpose {
    pub const INIT: u64 = 1;
    pub const TASK: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const HAAR: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const BATCH: u64 = 6;
}
