//! Seeded, splittable random streams backed by ChaCha8 (a counter-based
//! generator): the same seed yields the same sequence regardless of how work
//! is scheduled.

use alloc::vec::Vec;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from the same seed.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = self.inner.clone();
        inner.set_stream(stream);
        inner.set_word_pos(0);
        Self { inner }
    }

    /// A sample from `[lo, hi)`.
    pub fn next_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Tensor> {
        // Written as a negation so NaN bounds are rejected too.
        if !(lo < hi) {
            return Err(Error::Bounds { lo, hi });
        }
        let data = (0..rows * cols)
            .map(|_| self.next_uniform(lo, hi))
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    /// Zero-mean Gaussian entries with standard deviation `sigma`.
    pub fn normal(&mut self, rows: usize, cols: usize, sigma: f64) -> Tensor {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.inner);
                sigma * z
            })
            .collect();
        Tensor::from_vec(rows, cols, data).expect("length matches by construction")
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}
