//! Score-based generative modeling of spectra: the variance-exploding noise
//! schedule, the conditional score network, the denoising score-matching
//! objective, and the training loop.
//!
//! The model learns `s(x_t, t, c) ~ grad_x log p_t(x_t | c)`, the score of
//! the data distribution blurred by Gaussian noise of scale `sigma_t`. The
//! detector only ever queries this function; nothing here generates samples.

mod loss;
mod model_file;
mod network;
mod schedule;
mod train;

pub use loss::{
    dsm_loss_and_grad, dsm_loss_and_grad_with_draws, dsm_loss_from_scores, sample_draws, DsmDraw,
    Weighting,
};
pub use model_file::{load_model, save_model};
pub use network::{ArchConfig, ContextArch, ScoreNetwork, FOURIER_FREQUENCY_SCALE};
pub use schedule::{perturb, SigmaSchedule};
pub use train::{train, TrainConfig, TrainReport};
