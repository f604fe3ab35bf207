//! Seed plumbing. Every random stream in the harness is a ChaCha8 generator
//! seeded from a `u64`, and child seeds are derived by hashing
//! `(parent, index)` so work split across threads draws the same numbers no
//! matter how it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix(mix(parent) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Named sub-streams so training, evaluation and serving never share draws.
pub mod stream {
    pub const TRAIN: u64 = 0x7472_6169_6e00_0000;
    pub const INIT: u64 = 0x696e_6974_0000_0000;
    pub const EVAL: u64 = 0x6576_616c_0000_0000;
    pub const SERVE: u64 = 0x7365_7276_0000_0000;
}
