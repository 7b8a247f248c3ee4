//! Reverse-mode autodiff over dense `f64` matrices, plus the pieces that sit
//! directly on top of it: Adam updates, spectral weight normalization, seeded
//! random streams, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod rng;
pub mod spectral;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use rng::RngStream;
pub use spectral::{spectral_normalize, spectral_normalize_eval, SpectralState};
pub use tape::{Activation, Grads, NodeId, Tape};
pub use tensor::Tensor;
