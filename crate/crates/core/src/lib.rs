//! Structure-aware performance-score synchronization.
//!
//! A convolutional encoder reads the cross-similarity matrix between a
//! performance and its score, a max-unpooling and local self-attention
//! decoder refines it, and a dense head emits the whole alignment path at
//! once. Training minimizes a soft-DTW divergence between predicted and
//! reference index sequences; classic DTW serves as baseline and oracle.
//!
//! Module map:
//! - [`tensor`]: reverse-mode autodiff tape and the layer primitives.
//! - [`synth`]: synthetic corpora with tempo and structural deviations.
//! - [`softdtw`]: soft-min, soft-DTW, the normalized divergence, classic DTW.
//! - [`model`]: the convolutional-attentional network and checkpoints.
//! - [`train`]: losses, optimizers, the training loop and evaluation.
//! - [`cli`]: the `scoresync` command-line front end.

pub mod cli;
pub mod error;
pub mod matrix;
pub mod model;
pub mod softdtw;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Seconds per analysis frame: a 512-sample hop at 22050 Hz.
pub const DEFAULT_FRAME_SECONDS: f64 = 512.0 / 22050.0;
