//! Per-episode random streams.
//!
//! Every stream is a pure function of a base seed and a tuple of indices, so
//! work can be scheduled in any order (or in parallel) without changing
//! results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each element of `path` into a single 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, &p| {
        splitmix64(acc.rotate_left(23) ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

pub fn stream(base: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream labels keep unrelated consumers of the same base seed apart.
pub mod label {
    pub const SCENE: u64 = 1;
    pub const CORRUPTION: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const TASK_MODEL: u64 = 4;
    pub const TRAIN_DRAW: u64 = 5;
    pub const SELECT: u64 = 6;
}
