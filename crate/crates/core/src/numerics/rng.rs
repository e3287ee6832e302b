//! Seeded randomness.
//!
//! Streams come from ChaCha8 (a counter-based generator with a published
//! reference) and standard normals from the ziggurat sampler in `rand_distr`,
//! so a seed fully determines every draw. Parallel work never shares a
//! stream: each item gets its own generator seeded by [`sub_seed`].

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Array;

/// Deterministic random stream. Single owner; clone to fork a copy of the
/// current state.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for item `index` of a batch derived from this
    /// stream's seed. Does not advance `self`.
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(sub_seed(self.seed, index))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

/// I.i.d. standard normal array of the given shape.
pub fn gauss(rng: &mut Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::from_vec(shape, rng.normal_vec(n)).expect("length matches shape")
}

/// SplitMix64 finalizer over `(master, index)`.
pub fn sub_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
