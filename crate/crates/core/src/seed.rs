//! Seed derivation for independent, schedule-free random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere a reproducible stream is needed.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream index into a new, decorrelated seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named sub-streams so unrelated consumers of one seed never overlap.
pub mod stream {
    pub const ATMOSPHERIC_LIGHT: u64 = 1;
    pub const STREAKS: u64 = 2;
    pub const SNOW: u64 = 3;
    pub const RAINDROPS: u64 = 4;
    pub const RECIPE: u64 = 5;
    pub const CLEAN_SOURCE: u64 = 16;
    pub const SAMPLE: u64 = 17;
    pub const TRAIN_DIFFUSION: u64 = 32;
    pub const TRAIN_REFINER: u64 = 33;
    pub const COARSE: u64 = 34;
    pub const EVAL: u64 = 35;
    pub const INIT: u64 = 36;
}
