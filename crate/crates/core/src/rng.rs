//! Seed derivation.
//!
//! A single master seed fans out into named, independent streams
//! (`data`, `envs`, `eps`, `prior-mc`, `certify`, ...). A stream seed is
//! `splitmix64(master ^ fnv1a64(name))`; keyed sub-streams (one per
//! iteration, environment or test point) chain further `splitmix64` mixes
//! of the key words. Every stream is a ChaCha8 generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type VidsRng = ChaCha8Rng;

pub const STREAM_DATA: &str = "data";
pub const STREAM_ENVS: &str = "envs";
pub const STREAM_EPS: &str = "eps";
pub const STREAM_PRIOR: &str = "prior-mc";
pub const STREAM_CERTIFY: &str = "certify";
pub const STREAM_INIT: &str = "init";
pub const STREAM_PREDICT: &str = "predict";

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed of the named stream under `master`.
pub fn derive_seed(master: u64, stream: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stream))
}

/// Seed of a sub-stream keyed by integer words, e.g. `(iteration, env)`.
pub fn keyed_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng_from_seed(seed: u64) -> VidsRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, name: &str) -> VidsRng {
    rng_from_seed(derive_seed(master, name))
}

pub fn standard_normal(rng: &mut VidsRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn standard_normal_vec(rng: &mut VidsRng, len: usize) -> alloc::vec::Vec<f64> {
    (0..len).map(|_| standard_normal(rng)).collect()
}
