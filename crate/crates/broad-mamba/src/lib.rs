//! Bidirectional state space sequence modeling with broad learning and
//! probability-guided multi-modal fusion.
//!
//! The crate builds per-utterance emotion classifiers for aligned
//! text/audio/video conversation features:
//!
//! 1. [`ssm`] — diagonal state space kernels: zero-order-hold and Taylor
//!    discretization, sequential scan, kernel materialization, and causal
//!    convolution (naive reference + FFT fast path).
//! 2. [`embedding`] — per-modality 1-D convolution front-end plus sinusoidal
//!    positional encoding.
//! 3. [`bissm`] — the bidirectional SSM convolution block (causal kernel,
//!    anti-causal kernel, elementwise skip) with analytic gradients.
//! 4. [`broad`] — frozen random feature and enhancement nodes, the broad
//!    representation, and a closed-form ridge solver.
//! 5. [`fusion`] — per-modality confidence weights, probability-guided
//!    fusion, the classifier head, and the losses.
//! 6. [`model`] / [`train`] — the assembled pipeline, AdamW training on
//!    synthetic conversations, metrics, and finite-difference grad checking.
//! 7. [`io`] / [`cli`] — tensor/dataset/checkpoint files, run configuration,
//!    and the command-line entry points.
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each one demonstrates a single capability end to end.

pub mod bench;
pub mod bissm;
pub mod broad;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
