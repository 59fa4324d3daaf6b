use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Glorot-uniform matrices and zero biases, drawn from one seeded stream.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = self.rng.random_range(-a..a);
        }
        t
    }

    /// Glorot for a `[out, in]` weight matrix.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        self.glorot(&[rows, cols], cols, rows)
    }

    /// All-zero `[rows, cols]` weight, for residual branches that should
    /// start as the identity.
    pub fn zero_matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(&[rows, cols])
    }

    pub fn zeros(&mut self, n: usize) -> Tensor {
        Tensor::zeros(&[n])
    }

    pub fn ones(&mut self, n: usize) -> Tensor {
        Tensor::ones(&[n])
    }
}
