//! The conditional score network and its hand-written backward pass.
//!
//! Architecture (spectrum treated as a 1-channel signal over the band axis):
//!
//! ```text
//! x_t (1 x C) --conv k--> (width x C) --[res block]*B--> conv k=1 --> raw (C)
//!                                                        score = raw / sigma_t
//! res block: u = conv k
//!            v = FiLM(u; gamma_b, beta_b)   per-channel scale and shift
//!            w = SiLU(v)
//!            y = conv k
//!            out = in + y
//! ```
//!
//! The FiLM parameters come from the conditioning head: a Gaussian-Fourier
//! embedding of `t` (frequencies frozen at init), optionally concatenated
//! with a mean-pooled encoding of the dual-window context spectra, passed
//! through a two-layer MLP that emits `(gamma_hat, beta)` per block and
//! channel. Blocks apply `gamma = 1 + gamma_hat`, so a zero conditioning
//! head starts as identity modulation.
//!
//! The network predicts `raw ~ -z` and the score is `raw / sigma_t`, the
//! standard noise-scaled parameterization: output magnitude stays O(1)
//! across times while the score scales like `1/sigma_t`.
//!
//! Parameters live in one flat `f64` vector; `tensor_table` defines the
//! canonical (name, shape, offset) layout used by initialization, the
//! backward pass, and the model file.

use super::schedule::SigmaSchedule;
use crate::data_io::ContextSet;
use crate::error::{Error, Result};
use crate::numerics::{
    conv1d_backward, conv1d_same, dense_backward, dense_forward, film_backward, film_modulate,
    gaussian_fourier_embed, sample_fourier_frequencies, silu, silu_backward, FeatureMap,
    SeededRng,
};
use std::ops::Range;

/// Standard deviation of the frozen Gaussian-Fourier frequency draws.
pub const FOURIER_FREQUENCY_SCALE: f64 = 16.0;

/// Context-encoder dimensions: each of the `count` context spectra passes
/// through a shared two-layer MLP (`bands -> hidden -> encoded`) and the
/// encodings are mean-pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ContextArch {
    /// Number of context spectra the model expects (`outer^2 - inner^2`).
    pub count: usize,
    /// Hidden width of the per-spectrum encoder.
    pub hidden: usize,
    /// Dimension of the pooled context encoding.
    pub encoded: usize,
}

/// Architecture descriptor: everything needed to reconstruct the parameter
/// layout.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchConfig {
    /// Spectrum dimension C (input and output length).
    pub bands: usize,
    /// Channel width of the convolutional trunk.
    pub width: usize,
    /// Number of residual blocks.
    pub blocks: usize,
    /// Convolution kernel width (odd).
    pub kernel: usize,
    /// Number of Fourier frequencies F; the time embedding has 2F entries.
    pub fourier_dim: usize,
    /// Hidden width of the conditioning MLP.
    pub film_hidden: usize,
    /// Context encoder, or `None` for the unconditional model.
    pub context: Option<ContextArch>,
}

impl ArchConfig {
    /// The default desk-scale architecture (unconditional).
    pub fn default_for_bands(bands: usize) -> Self {
        ArchConfig {
            bands,
            width: 64,
            blocks: 4,
            kernel: 3,
            fourier_dim: 64,
            film_hidden: 128,
            context: None,
        }
    }

    /// Re-checks the invariants (useful after deserialization).
    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.width == 0 || self.blocks == 0 || self.fourier_dim == 0
            || self.film_hidden == 0
        {
            return Err(Error::InvalidArgument(
                "architecture dimensions must be positive".into(),
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be odd, got {}",
                self.kernel
            )));
        }
        if let Some(ctx) = &self.context {
            if ctx.count == 0 || ctx.hidden == 0 || ctx.encoded == 0 {
                return Err(Error::InvalidArgument(
                    "context encoder dimensions must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Dimension of the conditioning input `g` (time embedding plus pooled
    /// context encoding when present).
    fn conditioning_dim(&self) -> usize {
        2 * self.fourier_dim + self.context.map_or(0, |c| c.encoded)
    }

    /// Output dimension of the conditioning MLP: `(gamma_hat, beta)` per
    /// block and channel.
    fn film_out_dim(&self) -> usize {
        self.blocks * 2 * self.width
    }

    /// The canonical parameter layout: `(name, shape)` pairs in
    /// serialization order.
    pub fn tensor_table(&self) -> Vec<(String, Vec<usize>)> {
        let (w, k) = (self.width, self.kernel);
        let mut table = vec![
            ("lift.w".to_string(), vec![w, 1, k]),
            ("lift.b".to_string(), vec![w]),
        ];
        for b in 0..self.blocks {
            table.push((format!("block{b}.conv1.w"), vec![w, w, k]));
            table.push((format!("block{b}.conv1.b"), vec![w]));
            table.push((format!("block{b}.conv2.w"), vec![w, w, k]));
            table.push((format!("block{b}.conv2.b"), vec![w]));
        }
        table.push(("head.w".to_string(), vec![1, w, 1]));
        table.push(("head.b".to_string(), vec![1]));
        table.push(("film.w1".to_string(), vec![self.film_hidden, self.conditioning_dim()]));
        table.push(("film.b1".to_string(), vec![self.film_hidden]));
        table.push(("film.w2".to_string(), vec![self.film_out_dim(), self.film_hidden]));
        table.push(("film.b2".to_string(), vec![self.film_out_dim()]));
        if let Some(ctx) = &self.context {
            table.push(("context.w1".to_string(), vec![ctx.hidden, self.bands]));
            table.push(("context.b1".to_string(), vec![ctx.hidden]));
            table.push(("context.w2".to_string(), vec![ctx.encoded, ctx.hidden]));
            table.push(("context.b2".to_string(), vec![ctx.encoded]));
        }
        table
    }

    /// Total number of parameters.
    pub fn param_count(&self) -> usize {
        self.tensor_table().iter().map(|(_, shape)| shape.iter().product::<usize>()).sum()
    }
}

/// Byte offsets of each tensor in the flat parameter vector.
struct Layout {
    ranges: Vec<(String, Range<usize>)>,
}

impl Layout {
    fn of(arch: &ArchConfig) -> Layout {
        let mut ranges = Vec::new();
        let mut offset = 0;
        for (name, shape) in arch.tensor_table() {
            let len: usize = shape.iter().product();
            ranges.push((name, offset..offset + len));
            offset += len;
        }
        Layout { ranges }
    }

    fn get(&self, name: &str) -> Range<usize> {
        self.ranges
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))
            .1
            .clone()
    }
}

/// The trained (or training) score model: architecture, noise schedule,
/// frozen Fourier frequencies, and the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    arch: ArchConfig,
    schedule: SigmaSchedule,
    frequencies: Vec<f64>,
    params: Vec<f64>,
}

/// Intermediate activations of one forward pass, retained for backprop.
pub(crate) struct ForwardCache {
    input: FeatureMap,
    conditioning: Vec<f64>,
    film_hidden_pre: Vec<f64>,
    film_hidden: Vec<f64>,
    film_raw: Vec<f64>,
    context: Option<ContextCache>,
    blocks: Vec<BlockCache>,
    trunk_out: FeatureMap,
}

struct ContextCache {
    hidden_pre: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

struct BlockCache {
    input: FeatureMap,
    conv1_out: FeatureMap,
    film_out: FeatureMap,
    act_out: FeatureMap,
}

impl ScoreNetwork {
    /// Initializes a fresh network.
    ///
    /// Fourier frequencies are drawn once here and frozen. Convolution and
    /// encoder weights get scaled-normal initialization; the second
    /// convolution of each residual block, the output head, and the second
    /// conditioning layer start at zero, so the initial network outputs the
    /// zero vector and every block starts as the identity.
    pub fn init(arch: ArchConfig, schedule: SigmaSchedule, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        let frequencies =
            sample_fourier_frequencies(arch.fourier_dim, FOURIER_FREQUENCY_SCALE, rng);
        let mut params = vec![0.0; arch.param_count()];
        let layout = Layout::of(&arch);
        for (name, range) in &layout.ranges {
            let fan_in = match name.as_str() {
                "lift.w" => Some(arch.kernel),
                "film.w1" => Some(arch.conditioning_dim()),
                "context.w1" => Some(arch.bands),
                "context.w2" => Some(arch.context.map_or(1, |c| c.hidden)),
                n if n.ends_with("conv1.w") => Some(arch.width * arch.kernel),
                // Zero-initialized: residual-branch outputs, the head, and
                // the modulation emitter. Biases also start at zero.
                _ => None,
            };
            if let Some(fan_in) = fan_in {
                let scale = (2.0 / fan_in as f64).sqrt();
                for p in &mut params[range.clone()] {
                    *p = rng.normal() * scale;
                }
            }
        }
        Ok(ScoreNetwork { arch, schedule, frequencies, params })
    }

    /// Reassembles a network from stored parts, re-validating shapes and
    /// finiteness (the deserialization path).
    pub fn from_parts(
        arch: ArchConfig,
        schedule: SigmaSchedule,
        frequencies: Vec<f64>,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        if frequencies.len() != arch.fourier_dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} Fourier frequencies, got {}",
                arch.fourier_dim,
                frequencies.len()
            )));
        }
        if params.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if frequencies.iter().chain(params.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(ScoreNetwork { arch, schedule, frequencies, params })
    }

    /// Architecture descriptor.
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    /// The noise schedule this model was trained under.
    pub fn schedule(&self) -> &SigmaSchedule {
        &self.schedule
    }

    /// Frozen Fourier frequencies.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Flat parameter vector.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameter vector (training and tests).
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offset range of a named tensor in the flat parameter vector.
    pub fn tensor_range(&self, name: &str) -> Option<Range<usize>> {
        Layout::of(&self.arch).ranges.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    fn check_context(&self, context: Option<&ContextSet>) -> Result<()> {
        match (self.arch.context, context) {
            (None, None) => Ok(()),
            (Some(_), None) => Err(Error::InvalidArgument(
                "model is conditional but no context was supplied".into(),
            )),
            (None, Some(_)) => Err(Error::InvalidArgument(
                "model is unconditional but a context was supplied".into(),
            )),
            (Some(arch), Some(ctx)) => {
                if ctx.count() != arch.count || ctx.dim() != self.arch.bands {
                    Err(Error::ShapeMismatch(format!(
                        "context must be {} spectra of {} bands, got {} of {}",
                        arch.count,
                        self.arch.bands,
                        ctx.count(),
                        ctx.dim()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Raw (un-scaled) network output together with the cache needed for
    /// backprop. `t` may be anything in `[0, t_max]` here; the `1/sigma_t`
    /// scaling and its `t >= t_min` guard live in [`ScoreNetwork::score`].
    pub(crate) fn forward_cached(
        &self,
        x_t: &[f64],
        t: f64,
        context: Option<&ContextSet>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        if x_t.len() != self.arch.bands {
            return Err(Error::ShapeMismatch(format!(
                "input spectrum has {} bands, model expects {}",
                x_t.len(),
                self.arch.bands
            )));
        }
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input spectrum".into()));
        }
        self.check_context(context)?;
        let arch = &self.arch;
        let layout = Layout::of(arch);
        let p = &self.params;
        let view = |name: &str| &p[layout.get(name)];

        // Conditioning vector g = [time embedding | pooled context].
        let mut conditioning = gaussian_fourier_embed(t, &self.frequencies);
        let context_cache = if let Some(ctx_arch) = arch.context {
            let ctx = context.expect("checked above");
            let mut hidden_pre = Vec::with_capacity(ctx.count());
            let mut hidden = Vec::with_capacity(ctx.count());
            let mut pooled = vec![0.0; ctx_arch.encoded];
            for i in 0..ctx.count() {
                let pre = dense_forward(
                    ctx.spectrum(i),
                    view("context.w1"),
                    view("context.b1"),
                    ctx_arch.hidden,
                )?;
                let post: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
                let enc =
                    dense_forward(&post, view("context.w2"), view("context.b2"), ctx_arch.encoded)?;
                for (acc, e) in pooled.iter_mut().zip(&enc) {
                    *acc += e;
                }
                hidden_pre.push(pre);
                hidden.push(post);
            }
            let inv = 1.0 / ctx.count() as f64;
            for v in &mut pooled {
                *v *= inv;
            }
            conditioning.extend_from_slice(&pooled);
            Some(ContextCache { hidden_pre, hidden })
        } else {
            None
        };

        // Conditioning MLP -> per-block (gamma_hat, beta).
        let film_hidden_pre =
            dense_forward(&conditioning, view("film.w1"), view("film.b1"), arch.film_hidden)?;
        let film_hidden: Vec<f64> = film_hidden_pre.iter().map(|&v| silu(v)).collect();
        let film_raw =
            dense_forward(&film_hidden, view("film.w2"), view("film.b2"), arch.film_out_dim())?;

        // Convolutional trunk.
        let input = FeatureMap::new(1, arch.bands, x_t.to_vec())?;
        let mut h =
            conv1d_same(&input, view("lift.w"), view("lift.b"), arch.width, arch.kernel)?;
        let mut blocks = Vec::with_capacity(arch.blocks);
        for b in 0..arch.blocks {
            let base = b * 2 * arch.width;
            let gamma: Vec<f64> =
                film_raw[base..base + arch.width].iter().map(|&g| 1.0 + g).collect();
            let beta = &film_raw[base + arch.width..base + 2 * arch.width];
            let conv1_out = conv1d_same(
                &h,
                view(&format!("block{b}.conv1.w")),
                view(&format!("block{b}.conv1.b")),
                arch.width,
                arch.kernel,
            )?;
            let film_out = film_modulate(&conv1_out, &gamma, beta)?;
            let mut act_out = film_out.clone();
            for v in act_out.values_mut() {
                *v = silu(*v);
            }
            let branch = conv1d_same(
                &act_out,
                view(&format!("block{b}.conv2.w")),
                view(&format!("block{b}.conv2.b")),
                arch.width,
                arch.kernel,
            )?;
            let block_input = h.clone();
            for (hv, yv) in h.values_mut().iter_mut().zip(branch.values()) {
                *hv += yv;
            }
            blocks.push(BlockCache { input: block_input, conv1_out, film_out, act_out });
        }
        let raw = conv1d_same(&h, view("head.w"), view("head.b"), 1, 1)?.into_values();
        let cache = ForwardCache {
            input,
            conditioning,
            film_hidden_pre,
            film_hidden,
            film_raw,
            context: context_cache,
            blocks,
            trunk_out: h,
        };
        Ok((raw, cache))
    }

    /// Raw network output without keeping the cache.
    pub fn forward_raw(&self, x_t: &[f64], t: f64, context: Option<&ContextSet>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x_t, t, context)?.0)
    }

    /// The score estimate `s(x_t, t, c) = raw(x_t, t, c) / sigma_t`.
    ///
    /// Rejects `t < t_min`: the division amplifies the raw output without
    /// bound and the model never trained there.
    pub fn score(&self, x_t: &[f64], t: f64, context: Option<&ContextSet>) -> Result<Vec<f64>> {
        if t < self.schedule.t_min() {
            return Err(Error::InvalidArgument(format!(
                "time {t} below the model's t_min {}",
                self.schedule.t_min()
            )));
        }
        let sigma = self.schedule.sigma_at(t)?;
        let mut raw = self.forward_raw(x_t, t, context)?;
        for v in &mut raw {
            *v /= sigma;
        }
        Ok(raw)
    }

    /// Accumulates parameter gradients for one sample into `grads` (same
    /// layout as `params`), given the upstream gradient with respect to the
    /// raw output. The context spectra used in the forward pass must be
    /// supplied again for the encoder weight gradients.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        context: Option<&ContextSet>,
        upstream_raw: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        let arch = &self.arch;
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffer length".into()));
        }
        if upstream_raw.len() != arch.bands {
            return Err(Error::ShapeMismatch("upstream gradient length".into()));
        }
        let layout = Layout::of(arch);
        let p = &self.params;
        let view = |name: &str| &p[layout.get(name)];
        let add = |grads: &mut [f64], range: Range<usize>, src: &[f64]| {
            for (g, s) in grads[range].iter_mut().zip(src) {
                *g += s;
            }
        };

        // Head (k=1 conv from the final trunk state down to 1 channel).
        let up = FeatureMap::new(1, arch.bands, upstream_raw.to_vec())?;
        let (mut d_h, g_head_w, g_head_b) =
            conv1d_backward(&cache.trunk_out, view("head.w"), 1, 1, &up)?;
        add(grads, layout.get("head.w"), &g_head_w);
        add(grads, layout.get("head.b"), &g_head_b);

        // Residual blocks in reverse.
        let mut d_film_raw = vec![0.0; arch.film_out_dim()];
        for b in (0..arch.blocks).rev() {
            let blk = &cache.blocks[b];
            let base = b * 2 * arch.width;
            let gamma: Vec<f64> =
                cache.film_raw[base..base + arch.width].iter().map(|&g| 1.0 + g).collect();
            let (d_act, g_c2w, g_c2b) = conv1d_backward(
                &blk.act_out,
                view(&format!("block{b}.conv2.w")),
                arch.width,
                arch.kernel,
                &d_h,
            )?;
            add(grads, layout.get(&format!("block{b}.conv2.w")), &g_c2w);
            add(grads, layout.get(&format!("block{b}.conv2.b")), &g_c2b);
            let mut d_film_out = d_act;
            for (dv, &pre) in d_film_out.values_mut().iter_mut().zip(blk.film_out.values()) {
                *dv *= silu_backward(pre);
            }
            let (d_conv1, d_gamma, d_beta) = film_backward(&blk.conv1_out, &gamma, &d_film_out)?;
            for (dst, src) in d_film_raw[base..base + arch.width].iter_mut().zip(&d_gamma) {
                *dst += src;
            }
            for (dst, src) in
                d_film_raw[base + arch.width..base + 2 * arch.width].iter_mut().zip(&d_beta)
            {
                *dst += src;
            }
            let (d_input, g_c1w, g_c1b) = conv1d_backward(
                &blk.input,
                view(&format!("block{b}.conv1.w")),
                arch.width,
                arch.kernel,
                &d_conv1,
            )?;
            add(grads, layout.get(&format!("block{b}.conv1.w")), &g_c1w);
            add(grads, layout.get(&format!("block{b}.conv1.b")), &g_c1b);
            // Skip connection: gradient flows both through the branch and
            // directly.
            for (dh, di) in d_h.values_mut().iter_mut().zip(d_input.values()) {
                *dh += di;
            }
        }

        // Lift convolution.
        let (_, g_lift_w, g_lift_b) =
            conv1d_backward(&cache.input, view("lift.w"), arch.width, arch.kernel, &d_h)?;
        add(grads, layout.get("lift.w"), &g_lift_w);
        add(grads, layout.get("lift.b"), &g_lift_b);

        // Conditioning MLP.
        let (d_film_hidden, g_w2, g_b2) =
            dense_backward(&cache.film_hidden, view("film.w2"), arch.film_out_dim(), &d_film_raw)?;
        add(grads, layout.get("film.w2"), &g_w2);
        add(grads, layout.get("film.b2"), &g_b2);
        let d_hidden_pre: Vec<f64> = d_film_hidden
            .iter()
            .zip(&cache.film_hidden_pre)
            .map(|(d, &pre)| d * silu_backward(pre))
            .collect();
        let (d_conditioning, g_w1, g_b1) =
            dense_backward(&cache.conditioning, view("film.w1"), arch.film_hidden, &d_hidden_pre)?;
        add(grads, layout.get("film.w1"), &g_w1);
        add(grads, layout.get("film.b1"), &g_b1);

        // Context encoder (the time embedding has no parameters).
        if let Some(ctx_arch) = arch.context {
            let ctx = context.ok_or_else(|| {
                Error::InvalidArgument("backward needs the context used in the forward pass".into())
            })?;
            let ctx_cache = cache.context.as_ref().expect("forward cached context");
            let d_pooled = &d_conditioning[2 * arch.fourier_dim..];
            let inv = 1.0 / ctx.count() as f64;
            let d_encoded: Vec<f64> = d_pooled.iter().map(|d| d * inv).collect();
            for i in 0..ctx.count() {
                let (d_hidden, g_cw2, g_cb2) = dense_backward(
                    &ctx_cache.hidden[i],
                    view("context.w2"),
                    ctx_arch.encoded,
                    &d_encoded,
                )?;
                add(grads, layout.get("context.w2"), &g_cw2);
                add(grads, layout.get("context.b2"), &g_cb2);
                let d_pre: Vec<f64> = d_hidden
                    .iter()
                    .zip(&ctx_cache.hidden_pre[i])
                    .map(|(d, &pre)| d * silu_backward(pre))
                    .collect();
                let (_, g_cw1, g_cb1) =
                    dense_backward(ctx.spectrum(i), view("context.w1"), ctx_arch.hidden, &d_pre)?;
                add(grads, layout.get("context.w1"), &g_cw1);
                add(grads, layout.get("context.b1"), &g_cb1);
            }
        }
        Ok(())
    }
}
