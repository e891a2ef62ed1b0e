use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};
use crate::error::{arg_err, Result};

/// Seeded generator used by every stochastic operation in the crate.
///
/// The algorithm is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded from a `u64`
/// through `SeedableRng::seed_from_u64`; its output is identical on every
/// platform. Independent sub-streams are selected with ChaCha's 64-bit stream
/// counter so that worker results do not depend on scheduling.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Generator for sub-stream `stream` of master seed `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Stream keyed by `(sample, source)`, used for per-worker data generation.
    pub fn for_sample(seed: u64, sample: u64, source: u64) -> Self {
        Self::with_stream(seed, (sample << 20) ^ source)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi)`.
    pub fn index(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }
}

/// Tensor of i.i.d. normal samples.
pub fn randn<T: Real>(rng: &mut Rng, dims: &[usize], mean: f64, std: f64) -> Result<Tensor<T>> {
    if !(std >= 0.0) {
        return Err(arg_err!("standard deviation must be non-negative, got {std}"));
    }
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = T::from_f64_lossy(mean + std * rng.normal());
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_mean() {
        let mut rng = Rng::new(1);
        let t = randn::<f32>(&mut rng, &[5, 7], 2.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = Rng::new(1);
        assert!(randn::<f32>(&mut rng, &[2], 0.0, -1.0).is_err());
        assert!(randn::<f32>(&mut rng, &[2], 0.0, f64::NAN).is_err());
    }

    #[test]
    fn moments_of_a_million_samples() {
        let mut rng = Rng::new(42);
        let t = randn::<f64>(&mut rng, &[1_000_000], 0.0, 1.0).unwrap();
        let n = t.numel() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.02, "var {var}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = randn::<f32>(&mut Rng::new(9), &[4, 4], 0.0, 1.0).unwrap();
        let b = randn::<f32>(&mut Rng::new(9), &[4, 4], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Rng::new(123);
        let mut b = Rng::new(123);
        for _ in 0..100_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = Rng::for_sample(5, 0, 0);
        let mut b = Rng::for_sample(5, 0, 1);
        let mut c = Rng::for_sample(5, 1, 0);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && x != z && y != z);
    }
}
