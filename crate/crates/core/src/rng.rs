//! Caller-owned random number generation.
//!
//! Every sampling routine in the crate takes a `&mut Rng`. The generator is
//! ChaCha8 (a counter-based stream cipher), and [`Rng::split`] hands out
//! independent child streams so that whole experiments are reproducible from
//! a single `u64` seed.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
    children: u64,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
            children: 0,
        }
    }

    /// Derives an independent child stream. The parent advances, so repeated
    /// calls give distinct children.
    pub fn split(&mut self) -> Rng {
        let seed = self.inner.next_u64();
        self.children += 1;
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(self.children);
        Rng {
            inner,
            spare_normal: None,
            children: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal draw via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), self.normal_vec(n)).expect("shape and data agree")
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], low: f64, high: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| low + (high - low) * self.uniform()).collect();
        Tensor::from_vec(shape.to_vec(), data).expect("shape and data agree")
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
