//! Convolutional network training engine with Gaussian-process
//! hyperparameter tuning.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`nn`]: tensors, per-layer forward/backward kernels, the sequential
//!   [`nn::Network`], shape inference and parameter counting.
//! * [`loss`]: cross-entropy losses and L1/L2 penalties.
//! * [`optim`]: mini-batch iteration, SGD and Adam.
//! * [`train`]: the epoch loop, early stopping, history and checkpoints.
//! * [`data`]: PGM ingestion, resizing, normalization, augmentation,
//!   splitting and the synthetic four-class generator.
//! * [`bayesopt`]: GP surrogate, expected improvement, search spaces and
//!   the tuning loop.
//! * [`eval`]: confusion matrices and classification reports.

pub mod bayesopt;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
