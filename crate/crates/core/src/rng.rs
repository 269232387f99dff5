//! The repository-wide random number source.
//!
//! Every stochastic routine draws from ChaCha8 seeded with a 64-bit seed via
//! `SeedableRng::seed_from_u64`. Independent substreams are obtained by
//! selecting a ChaCha stream id, so `stream(seed, k)` and `stream(seed, j)`
//! never overlap for `k != j`.
//!
//! Integer-to-unit-interval mapping: a uniform `f64` in `[0, 1)` is
//! `(u64 >> 11) as f64 * 2^-53`, which is what `rand`'s `StandardUniform`
//! produces for `f64`. Gaussians use `rand_distr::StandardNormal`
//! (ziggurat), which is deterministic across platforms.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct LabRng(ChaCha8Rng);

impl LabRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// A substream of `seed` identified by `stream`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    /// Split off an independent generator, advancing `self`.
    pub fn split(&mut self) -> Self {
        let seed = self.0.next_u64();
        Self::new(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(-a, a)`.
    pub fn symmetric_open(&mut self, a: f64) -> f64 {
        loop {
            let v = a * (2.0 * self.unit() - 1.0);
            if v > -a {
                return v;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform on the unit sphere in `R^n`.
    pub fn unit_sphere(&mut self, n: usize) -> Vec<f64> {
        loop {
            let g = self.normal_vec(n);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-300 {
                return g.into_iter().map(|v| v / norm).collect();
            }
        }
    }
}
