//! Keyed random streams.
//!
//! Every random draw in the simulator comes from a ChaCha stream whose seed is
//! a mix of the run seed and a list of integer keys (round, symbol, entry ...).
//! Two call sites that use the same keys see the same numbers regardless of
//! evaluation order, which is what makes methods share channel draws.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub mod tag {
    pub const CHANNEL: u64 = 0x4348_414e;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const SCHEDULE: u64 = 0x5343_4844;
    pub const POSTERIOR: u64 = 0x504f_5354;
    pub const SIGMA: u64 = 0x5349_474d;
    pub const DATA: u64 = 0x4441_5441;
    pub const PARTITION: u64 = 0x5041_5254;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a key path into a single 64-bit seed.
pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Circularly symmetric complex Gaussian with E|z|^2 = variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(s * normal(rng), s * normal(rng))
}
