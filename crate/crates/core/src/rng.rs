//! Seeded random streams.
//!
//! Every stochastic routine derives its generators from a single `u64` seed.
//! Noise-trader and value shocks use separate streams so that switching one
//! of them off leaves the other unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

const STREAM_NOISE_TRADER: u64 = 1;
const STREAM_VALUE: u64 = 2;
const STREAM_AUX_BASE: u64 = 1 << 32;

/// Stream for the noise-trader shocks (tag "N").
pub fn noise_stream(seed: u64) -> Rng {
    stream(seed, STREAM_NOISE_TRADER)
}

/// Stream for the fundamental value shocks (tag "V").
pub fn value_stream(seed: u64) -> Rng {
    stream(seed, STREAM_VALUE)
}

/// Auxiliary stream `index`, e.g. one per bootstrap replicate.
pub fn aux_stream(seed: u64, index: u64) -> Rng {
    stream(seed, STREAM_AUX_BASE + index)
}

fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` standard normal draws.
pub fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
