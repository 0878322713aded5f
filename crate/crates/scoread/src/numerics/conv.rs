//! 1D convolution with "same" zero padding, plus its exact backward pass.
//!
//! This is the workhorse of the score network: spectra are treated as 1D
//! signals over the band axis and convolved with small odd-width kernels so
//! each output band mixes information from its spectral neighborhood.
//!
//! Weight layout is `[out_channel][in_channel][tap]`, flattened row-major.

use super::FeatureMap;
use crate::error::{Error, Result};

fn validate(
    input: &FeatureMap,
    weights: &[f64],
    bias: Option<&[f64]>,
    out_channels: usize,
    kernel: usize,
) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel width must be odd and positive, got {kernel}"
        )));
    }
    if out_channels == 0 {
        return Err(Error::InvalidArgument("out_channels must be positive".into()));
    }
    let expected = out_channels * input.channels() * kernel;
    if weights.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "conv weights expect {expected} values ({out_channels} out x {} in x {kernel} taps), got {}",
            input.channels(),
            weights.len()
        )));
    }
    if let Some(b) = bias {
        if b.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv bias expects {out_channels} values, got {}",
                b.len()
            )));
        }
    }
    Ok(())
}

/// Convolves `input` with `weights` (layout `[out][in][tap]`) and adds
/// `bias`, producing `out_channels` channels of the same length as the
/// input. Out-of-range taps read zero.
pub fn conv1d_same(
    input: &FeatureMap,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    kernel: usize,
) -> Result<FeatureMap> {
    validate(input, weights, Some(bias), out_channels, kernel)?;
    let len = input.length();
    let in_channels = input.channels();
    let half = (kernel / 2) as isize;
    let mut out = FeatureMap::zeros(out_channels, len);
    for o in 0..out_channels {
        out.channel_mut(o).fill(bias[o]);
        for i in 0..in_channels {
            let src = input.channel(i);
            for j in 0..kernel {
                let w = weights[(o * in_channels + i) * kernel + j];
                if w == 0.0 {
                    continue;
                }
                let shift = j as isize - half;
                let lo = (-shift).max(0) as usize;
                let hi = ((len as isize - shift).min(len as isize)).max(0) as usize;
                let dst = out.channel_mut(o);
                for p in lo..hi {
                    dst[p] += w * src[(p as isize + shift) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv1d_same`].
///
/// Given the upstream gradient with respect to the convolution output,
/// returns `(grad_input, grad_weights, grad_bias)` with the same layouts as
/// the forward arguments.
pub fn conv1d_backward(
    input: &FeatureMap,
    weights: &[f64],
    out_channels: usize,
    kernel: usize,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, Vec<f64>, Vec<f64>)> {
    validate(input, weights, None, out_channels, kernel)?;
    if upstream.channels() != out_channels || upstream.length() != input.length() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient must be {out_channels} x {}, got {} x {}",
            input.length(),
            upstream.channels(),
            upstream.length()
        )));
    }
    let len = input.length();
    let in_channels = input.channels();
    let half = (kernel / 2) as isize;
    let mut grad_input = FeatureMap::zeros(in_channels, len);
    let mut grad_weights = vec![0.0; weights.len()];
    let mut grad_bias = vec![0.0; out_channels];
    for o in 0..out_channels {
        let up = upstream.channel(o);
        grad_bias[o] = up.iter().sum();
        for i in 0..in_channels {
            let src = input.channel(i);
            for j in 0..kernel {
                let shift = j as isize - half;
                let lo = (-shift).max(0) as usize;
                let hi = ((len as isize - shift).min(len as isize)).max(0) as usize;
                let w = weights[(o * in_channels + i) * kernel + j];
                let gi = grad_input.channel_mut(i);
                let mut gw = 0.0;
                for p in lo..hi {
                    let q = (p as isize + shift) as usize;
                    gw += up[p] * src[q];
                    gi[q] += w * up[p];
                }
                grad_weights[(o * in_channels + i) * kernel + j] = gw;
            }
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}
