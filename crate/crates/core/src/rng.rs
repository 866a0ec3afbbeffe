//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from a
//! base seed plus a stream tag, so that results do not depend on the order
//! in which components consume randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used for named sub-streams of a single run seed.
pub mod streams {
    pub const DATAGEN: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const EPISODES: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const DOWNSAMPLE: u64 = 7;
    pub const BALANCE: u64 = 8;
}

/// A generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A generator for item `index` of stream `stream` under `seed`.
///
/// Used for per-instance streams so that generation and evaluation can be
/// reordered or parallelized without changing any draw.
pub fn item_stream(seed: u64, stream: u64, index: u64) -> Rng {
    let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream);
    rng
}
