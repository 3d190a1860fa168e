use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded random source backed by a counter-based stream cipher.
///
/// `split` derives an independent child stream from `(seed, index)` alone, so
/// work fanned out across threads draws the same numbers regardless of
/// scheduling.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream. Does not advance `self`.
    pub fn split(&self, index: u64) -> RandomSource {
        let child = mix64(self.seed ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        RandomSource::new(child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `n` i.i.d. draws from `N(0, sigma^2)`.
    pub fn gaussian(&mut self, n: usize, sigma: f64) -> Result<Vec<f64>> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "standard deviation must be finite and >= 0, got {sigma}"
            )));
        }
        let mut out = vec![0.0; n];
        if sigma > 0.0 {
            self.fill_normal(&mut out, sigma);
        }
        Ok(out)
    }

    pub(crate) fn fill_normal(&mut self, out: &mut [f64], sigma: f64) {
        for v in out.iter_mut() {
            *v = sigma * self.standard_normal();
        }
    }

    /// `n` i.i.d. signs in `{-1, +1}`.
    pub fn rademacher(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut bits = self.next_u64();
            for _ in 0..64.min(n - out.len()) {
                out.push(if bits & 1 == 1 { 1.0 } else { -1.0 });
                bits >>= 1;
            }
        }
        out
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}
