//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha8 stream keyed by
//! `(seed, stream)`, so adding a consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const ETF_ROTATION: u64 = 0x45_54_46;
    pub const LAYER_PEELED_INIT: u64 = 0x4c_50;
    pub const DATA_MEANS: u64 = 0x44_4d;
    pub const DATA_TRAIN: u64 = 0x44_54;
    pub const DATA_TEST: u64 = 0x44_45;
    pub const MODEL_INIT: u64 = 0x4d_49;
    pub const CLASSIFIER_INIT: u64 = 0x43_49;
    pub const SHUFFLE: u64 = 0x53_48;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian<T: Scalar>(rng: &mut Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::lit(v)
}

pub fn gaussian_vec<T: Scalar>(rng: &mut Rng, len: usize) -> Vec<T> {
    (0..len).map(|_| gaussian(rng)).collect()
}
