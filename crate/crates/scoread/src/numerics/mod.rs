//! Hand-rolled numeric kernels: the minimal set of operations the score
//! network and oracle are assembled from.
//!
//! Everything operates on `f64` slices or the two small containers defined
//! here ([`FeatureMap`] for channels-by-length activations, [`DenseMatrix`]
//! for row-major matrices). There is no autograd: each forward operation has
//! a matching explicit backward, and [`finite_difference_gradient`] is the
//! independent check that the hand-written derivatives are right.

mod adam;
mod conv;
mod gradcheck;
mod layers;
mod rng;

pub use adam::{adam_update, AdamHyper, AdamState};
pub use conv::{conv1d_backward, conv1d_same};
pub use gradcheck::finite_difference_gradient;
pub use layers::{
    dense_backward, dense_forward, film_backward, film_modulate, gaussian_fourier_embed,
    sample_fourier_frequencies, silu, silu_backward, DenseMatrix,
};
pub use rng::SeededRng;

use crate::error::{Error, Result};

/// A stack of 1D feature channels: `channels` signals, each of the same
/// `length`, stored contiguously channel by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    length: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    /// Wraps existing values as a feature map.
    ///
    /// Fails if `values.len() != channels * length` or any value is
    /// non-finite.
    pub fn new(channels: usize, length: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * length {
            return Err(Error::ShapeMismatch(format!(
                "feature map expects {} values ({} channels x {} length), got {}",
                channels * length,
                channels,
                length,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map values".into()));
        }
        Ok(FeatureMap { channels, length, values })
    }

    /// An all-zero feature map.
    pub fn zeros(channels: usize, length: usize) -> Self {
        FeatureMap { channels, length, values: vec![0.0; channels * length] }
    }

    /// Number of channels.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Length of each channel.
    pub fn length(&self) -> usize {
        self.length
    }

    /// One channel as a slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.length..(c + 1) * self.length]
    }

    /// One channel as a mutable slice.
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.length..(c + 1) * self.length]
    }

    /// All values, channel-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All values, mutable.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Consumes the map and returns its values.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// SiLU activation: `x * sigmoid(x)`.
pub fn activation_silu(x: f64) -> f64 {
    layers::silu(x)
}
