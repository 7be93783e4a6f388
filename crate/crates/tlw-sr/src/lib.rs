//! Training framework for image super-resolution with trainable per-pixel
//! loss weights.
//!
//! The crate couples a small super-resolution network with a weighting
//! network that learns where pixel-wise loss matters. Weight maps are
//! scored by a perceptual weight criterion, drawn from a relaxed
//! multivariate Bernoulli distribution, and the two networks are trained
//! jointly in an alternating (EM-style) loop. Everything runs on the CPU
//! from PNG ingestion to PSNR-Y evaluation and weight-map export.
//!
//! Start with the runnable programs in `examples/` — one per capability —
//! or the `tlw-sr` binary for the command-line workflow.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
#[doc(hidden)]
pub mod gradcheck;
pub mod judge;
pub mod models;
pub mod optim;
pub mod stochastic;
pub mod tensor;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
