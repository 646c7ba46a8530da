use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Identity,
}

/// Affine map followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} rows but bias has {} entries",
                weight.rows(),
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weight: Vec<f64> = (0..input * output)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..output).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            weight: Matrix::from_vec(output, input, weight).expect("sized above"),
            bias,
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    /// `act(x · Wᵀ + b)`; `x` is `batch × in`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_transpose(&self.weight)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
                if self.activation == Activation::ReLU && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }
}

/// Gradients of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &LinearLayer) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.values().iter().chain(&self.bias).all(|v| *v == 0.0)
    }
}
