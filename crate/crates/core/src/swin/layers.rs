use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::rng::truncated_normal;

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Dense layer `y = x W + b` with `W` stored as `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn init(seed: u64, path: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = truncated_normal(seed, &format!("{path}.weight"), INIT_STD, in_dim * out_dim);
        Self {
            weight: Array2::from_shape_vec((in_dim, out_dim), w).expect("shape matches"),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Applies the layer to `n` row-major input vectors packed in `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.in_dim();
        if d == 0 || !x.len().is_multiple_of(d) {
            return Err(Error::Dimension(format!(
                "linear input of length {} is not a multiple of in_dim {d}",
                x.len()
            )));
        }
        let view = ArrayView2::from_shape((x.len() / d, d), x).expect("checked above");
        let mut y = view.dot(&self.weight);
        y += &self.bias;
        Ok(y.into_raw_vec_and_offset().0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes each `dim`-sized token of `x` over its channels.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(x.len());
        for token in x.chunks_exact(d) {
            let mean = token.iter().sum::<f64>() / d as f64;
            let var = token.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (i, v) in token.iter().enumerate() {
                out.push((v - mean) * inv * self.gamma[i] + self.beta[i]);
            }
        }
        out
    }
}

/// Exact GELU, `0.5 x (1 + erf(x / sqrt 2))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Numerically stable softmax. Entries equal to `-inf` receive exactly zero
/// mass as long as at least one entry is finite.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
