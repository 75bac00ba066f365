//! Single-pass uncertainty from depth-wise next-activation surprisal.
//!
//! A tiny backbone is trained jointly with small predictor heads attached to
//! selected layers ("taps"). Each head predicts a diagonal Gaussian over the
//! next activation from a low-rank projection of the previous one. At
//! inference the standardized prediction errors are aggregated into a score
//! that is mapped to an error probability within the ordinary forward pass.
//!
//! Modules:
//! - [`nnet`]: tensors, kernels and backbones with tapped activations.
//! - [`heads`]: projectors, predictor heads, surprisal and exact gradients.
//! - [`train`]: joint optimization, regularizers and loss balancing.
//! - [`score`]: the surprisal score, confidence proxy, mapping and baselines.
//! - [`calibrate`]: logistic / isotonic mappings, thresholds, budget control.
//! - [`quantize`]: int8 export, log-variance lookup table and integer scoring.
//! - [`stream`]: synthetic data, corrupted streams, event labels and metrics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibrate;
pub mod container;
pub mod error;
pub mod experiment;
pub mod heads;
pub mod kv;
pub mod model;
pub mod nnet;
pub mod quantize;
pub mod rng;
pub mod score;
pub mod selftest;
pub mod stream;
pub mod train;

pub use error::{Result, SnapError};
pub use model::SnapModel;
pub use nnet::Tensor;
