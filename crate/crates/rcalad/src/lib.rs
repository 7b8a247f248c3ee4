//! Anomaly detection on tabular data with an adversarially learned
//! encoder/generator pair and a bank of cycle-consistency discriminators.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`] is a small reverse-mode engine over dense `f64` tensors,
//!   with the optimizer and spectral weight normalization built on top.
//! * [`net`] describes feed-forward networks declaratively and bundles the
//!   encoder, generator, and four discriminators of the model.
//! * [`train`] holds the adversarial objective, its per-term breakdown, and
//!   the alternating training loop.
//! * [`score`] turns a trained bundle into six per-sample anomaly scores.
//! * [`data`] covers tabular ingestion, one-hot encoding, scaling, stratified
//!   splits, and synthetic benchmark generators.
//! * [`stats`] computes detection metrics, cross-run aggregates, and the
//!   Wilcoxon signed-rank test.
//! * [`exp`] wires everything into reproducible experiments: config files,
//!   checkpoints, multi-run reports.
//!
//! Everything downstream of a seed is deterministic: two runs with the same
//! config and seed produce byte-identical artifacts.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exp;
pub mod net;
pub mod score;
pub mod stats;
pub mod train;

mod book;

pub use autodiff::{RngStream, Tensor};
pub use error::{Error, Result};
