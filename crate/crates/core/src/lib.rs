//! Diffusion-based vocal source separation on complex STFT spectrograms.
//!
//! The crate is organized around the stages of the separation pipeline:
//!
//! * [`dsp`] — deterministic transforms between waveforms and the
//!   band-split spectrogram tensors the diffusion model operates on.
//! * [`diffusion`] — noise schedule, preconditioning, training loss and
//!   deterministic ODE samplers.
//! * [`model`] — the frequency-axis U-Net denoiser with dual-path
//!   rotary-attention blocks, including reverse-mode gradients.
//! * [`data`] — dataset loading, excerpt sampling, augmentations and a
//!   synthetic toy dataset for end-to-end verification.
//! * [`train`] — optimizer loop, EMA tracking and checkpointing.
//! * [`separate`] — chunked end-to-end inference.
//! * [`metrics`] — chunked SDR evaluation and report generation.

pub mod data;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod separate;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
