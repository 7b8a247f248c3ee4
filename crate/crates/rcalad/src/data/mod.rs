//! Tabular data handling: CSV ingestion against a declared schema, one-hot
//! encoding and scaling, stratified splits with a normal-only training set,
//! and synthetic datasets shaped like the benchmarks.
//!
//! The intended pipeline is:
//!
//! 1. [`Table::load_csv`] or a generator from [`synth`] produces a raw
//!    [`Table`]: continuous values, categorical strings, 0/1 labels.
//! 2. [`stratified_split`] partitions row indices into train/validation/test,
//!    with anomalous training rows set aside; the model only ever sees
//!    [`Split::train_normal`].
//! 3. [`prepare`] fits a [`FittedTransform`] (category vocabularies plus
//!    per-feature scaling) on the normal training rows alone and applies it
//!    unchanged to all three parts, so nothing about validation or test rows
//!    can leak into the encoding.
//!
//! Everything is driven by an explicit [`RngStream`], so a split or a
//! synthetic dataset is exactly reproducible from its seed.
//!
//! [`RngStream`]: crate::autodiff::rng::RngStream

pub mod split;
pub mod synth;
pub mod table;
pub mod transform;

pub use split::{stratified_split, stratified_subsample, Split, SplitSpec};
pub use synth::{arrhythmia_like, kdd_like, synth_toy, ToyKind, ToySpec};
pub use table::{ColumnKind, ColumnSpec, Dataset, Schema, Table};
pub use transform::{prepare, FittedTransform, Prepared, ScalingMethod};

/// Test-set contamination rates the benchmark datasets are evaluated at.
/// Returns `None` for names this crate has no convention for.
pub fn default_alpha(dataset: &str) -> Option<f64> {
    match dataset {
        "kdd" | "kdd_like" => Some(0.20),
        "arrhythmia" | "arrhythmia_like" => Some(0.15),
        "thyroid" => Some(0.025),
        "musk" => Some(0.032),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_defaults_cover_the_named_datasets() {
        assert_eq!(default_alpha("kdd"), Some(0.20));
        assert_eq!(default_alpha("arrhythmia"), Some(0.15));
        assert_eq!(default_alpha("thyroid"), Some(0.025));
        assert_eq!(default_alpha("musk"), Some(0.032));
        assert_eq!(default_alpha("arrhythmia_like"), Some(0.15));
        assert_eq!(default_alpha("mnist"), None);
    }
}
