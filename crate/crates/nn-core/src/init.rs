//! Seeded weight initialization: uniform with fan-in scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data).unwrap()
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Tensor {
        Tensor::zeros(shape)
    }

    pub fn ones(&mut self, shape: Vec<usize>) -> Tensor {
        Tensor::zeros(shape).map(|_| 1.0)
    }
}
