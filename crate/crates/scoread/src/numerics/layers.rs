//! Dense layers, FiLM modulation, Gaussian-Fourier embeddings, and the SiLU
//! activation, each with an explicit backward pass.

use super::{FeatureMap, SeededRng};
use crate::error::{Error, Result};

/// A row-major `rows x cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps existing values; fails unless `values.len() == rows * cols` and
    /// every entry is finite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix expects {} values ({rows} x {cols}), got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix values".into()));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry at `(r, c)`.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// All values, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec expects input of length {}, got {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `y = A^T x`.
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "matvec_t expects input of length {}, got {}",
                self.rows,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        Ok(out)
    }
}

/// `y = W x + b` with `W` row-major of shape `out_dim x x.len()`.
pub fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64], out_dim: usize) -> Result<Vec<f64>> {
    let in_dim = x.len();
    if weights.len() != out_dim * in_dim {
        return Err(Error::ShapeMismatch(format!(
            "dense weights expect {} values ({out_dim} x {in_dim}), got {}",
            out_dim * in_dim,
            weights.len()
        )));
    }
    if bias.len() != out_dim {
        return Err(Error::ShapeMismatch(format!(
            "dense bias expects {out_dim} values, got {}",
            bias.len()
        )));
    }
    Ok((0..out_dim)
        .map(|o| {
            bias[o]
                + weights[o * in_dim..(o + 1) * in_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect())
}

/// Backward pass of [`dense_forward`]: returns `(grad_x, grad_weights,
/// grad_bias)`.
pub fn dense_backward(
    x: &[f64],
    weights: &[f64],
    out_dim: usize,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let in_dim = x.len();
    if weights.len() != out_dim * in_dim {
        return Err(Error::ShapeMismatch(format!(
            "dense weights expect {} values ({out_dim} x {in_dim}), got {}",
            out_dim * in_dim,
            weights.len()
        )));
    }
    if upstream.len() != out_dim {
        return Err(Error::ShapeMismatch(format!(
            "dense upstream expects {out_dim} values, got {}",
            upstream.len()
        )));
    }
    let mut grad_x = vec![0.0; in_dim];
    let mut grad_w = vec![0.0; weights.len()];
    for (o, &u) in upstream.iter().enumerate() {
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grad_x[i] += row[i] * u;
            grow[i] = x[i] * u;
        }
    }
    Ok((grad_x, grad_w, upstream.to_vec()))
}

/// FiLM (feature-wise linear modulation): scales and shifts each channel,
/// `out[c][i] = gamma[c] * input[c][i] + beta[c]`.
pub fn film_modulate(input: &FeatureMap, gamma: &[f64], beta: &[f64]) -> Result<FeatureMap> {
    if gamma.len() != input.channels() || beta.len() != input.channels() {
        return Err(Error::ShapeMismatch(format!(
            "film expects {} gammas and betas, got {} and {}",
            input.channels(),
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = input.clone();
    for c in 0..out.channels() {
        let (g, b) = (gamma[c], beta[c]);
        for v in out.channel_mut(c) {
            *v = g * *v + b;
        }
    }
    Ok(out)
}

/// Backward pass of [`film_modulate`]: returns `(grad_input, grad_gamma,
/// grad_beta)`.
pub fn film_backward(
    input: &FeatureMap,
    gamma: &[f64],
    upstream: &FeatureMap,
) -> Result<(FeatureMap, Vec<f64>, Vec<f64>)> {
    if gamma.len() != input.channels() {
        return Err(Error::ShapeMismatch(format!(
            "film expects {} gammas, got {}",
            input.channels(),
            gamma.len()
        )));
    }
    if upstream.channels() != input.channels() || upstream.length() != input.length() {
        return Err(Error::ShapeMismatch("film upstream shape".into()));
    }
    let mut grad_input = FeatureMap::zeros(input.channels(), input.length());
    let mut grad_gamma = vec![0.0; gamma.len()];
    let mut grad_beta = vec![0.0; gamma.len()];
    for c in 0..input.channels() {
        let up = upstream.channel(c);
        let inp = input.channel(c);
        let gi = grad_input.channel_mut(c);
        for i in 0..inp.len() {
            gi[i] = gamma[c] * up[i];
            grad_gamma[c] += up[i] * inp[i];
            grad_beta[c] += up[i];
        }
    }
    Ok((grad_input, grad_gamma, grad_beta))
}

/// Gaussian-Fourier feature embedding of a scalar: for each frequency `f`,
/// emits the pair `(sin(2 pi f u), cos(2 pi f u))`.
pub fn gaussian_fourier_embed(u: f64, frequencies: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies.len());
    for &f in frequencies {
        let (s, c) = (std::f64::consts::TAU * f * u).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// Draws `count` frequencies as `|N(0, scale^2)|`. They are sampled once at
/// model initialization and frozen (serialized with the model), so the
/// embedding is a fixed deterministic function thereafter.
pub fn sample_fourier_frequencies(count: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..count).map(|_| (rng.normal() * scale).abs()).collect()
}

/// SiLU activation `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Derivative of [`silu`]: `sigmoid(x) * (1 + x * (1 - sigmoid(x)))`.
pub fn silu_backward(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}
