//! Adversarial training: the objective, its variants, and the loop.
//!
//! [`config`] holds the hyperparameters, the toggle set that defines the
//! model family variants, and the latent/supplementary samplers.
//! [`loss`] wires the encoder, generator, and discriminators into the
//! objective's routes and produces per-term values and gradients.
//! [`trainer`] owns the alternating loop: discriminators step against a
//! frozen encoder/generator, then the encoder/generator group steps
//! against the refreshed critics.

pub mod config;
pub mod loss;
pub mod trainer;

pub use config::{
    sample_latent, sample_supplementary, LatentPrior, SigmaKind, SupplementaryDistribution,
    Toggles, TrainConfig, Variant,
};
pub use loss::{
    loss_discriminators, loss_discriminators_with_grads, loss_generator_encoder,
    loss_generator_encoder_with_grads, DropoutRngs, LossBreakdown, PROB_CLAMP,
};
pub use trainer::{EpochStats, TrainHistory, TrainRngs, Trainer};
