//! Score-based hyperspectral anomaly detection.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. **Data** ([`data_io`]): hyperspectral cubes in a JSON + raw-f32 BSQ
//!    container, ground-truth masks, global min-max normalization, and
//!    dual-window spatial context extraction.
//! 2. **Model** ([`sgm`]): a conditional score network (1D spectral
//!    convolutions, FiLM time/context modulation, Gaussian-Fourier time
//!    embedding) trained by denoising score matching under a
//!    variance-exploding noise schedule.
//! 3. **Detection** ([`detector`]): per pixel, draw `K` Gaussian
//!    perturbations at a fixed diffusion time, normalize the scores the model
//!    assigns to each perturbed copy, and sum them; the norm of the sum is
//!    the anomaly strength. Background pixels near the data manifold get
//!    nearly isotropic score directions (norm ~ sqrt(K)) while anomalies get
//!    aligned directions (norm -> K).
//! 4. **Evaluation** ([`eval`]): 3D-ROC curves, the derived AUC family,
//!    precision-recall area, and box-whisker statistics.
//!
//! The [`oracle`] module provides a Gaussian-on-a-subspace population with
//! closed-form scores; it is the ground truth the learned model is checked
//! against and the generator for synthetic benchmark scenes. [`numerics`]
//! holds the small hand-rolled kernels (convolution, dense layers, FiLM,
//! Adam, finite differences, seeded RNG) everything else is built from.
//!
//! All randomness flows through [`numerics::SeededRng`] streams, which makes
//! training runs, detection maps, and synthetic scenes byte-reproducible.

pub mod cli;
pub mod data_io;
pub mod detector;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod oracle;
pub mod sgm;

pub use error::{Error, Result};
