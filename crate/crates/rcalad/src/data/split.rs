//! Stratified train/validation/test splits with a normal-only training set.
//!
//! Splitting is per class, so the test contamination matches the dataset's
//! anomaly rate even at small row counts. Anomalous rows that land in the
//! training portion are set aside in [`Split::train_dropped`]; the model
//! trains only on [`Split::train_normal`].

use serde::{Deserialize, Serialize};

use crate::autodiff::rng::RngStream;
use crate::error::{Error, Result};

/// Fractions for one split, plus the contamination rate used later at
/// threshold time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Fraction of each class that goes to training (the rest is test).
    pub train_frac: f64,
    /// Fraction of the training portion held out as validation.
    pub val_frac: f64,
    /// Assumed anomaly fraction of the test set; drives threshold flagging.
    pub alpha: f64,
}

impl Default for SplitSpec {
    fn default() -> SplitSpec {
        SplitSpec { train_frac: 0.8, val_frac: 0.25, alpha: 0.2 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train_frac", self.train_frac), ("val_frac", self.val_frac)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0,1), got {v}")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Row indices of one split. The four parts partition `0..n`; each part is
/// sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Training rows with label 0; the only rows the model ever fits on.
    pub train_normal: Vec<usize>,
    /// Training rows with label 1, excluded from fitting.
    pub train_dropped: Vec<usize>,
    /// Held-out slice of training, both classes, for monitoring only.
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits per class: within each class the rows are shuffled, the test
/// fraction peeled off, then the validation fraction of what remains. Two
/// calls with equal labels and an equally seeded stream agree exactly.
pub fn stratified_split(labels: &[u8], spec: &SplitSpec, rng: &mut RngStream) -> Result<Split> {
    spec.validate()?;
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    if !labels.iter().any(|&l| l == 0) {
        return Err(Error::Insufficient { what: "normal rows", need: 1, have: 0 });
    }
    let mut split = Split {
        train_normal: Vec::new(),
        train_dropped: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        rng.shuffle(&mut idx);
        let n_test = ((1.0 - spec.train_frac) * idx.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        let n_val = (spec.val_frac * train.len() as f64).round() as usize;
        let (val, fit) = train.split_at(n_val);
        split.test.extend_from_slice(test);
        split.validation.extend_from_slice(val);
        if class == 0 {
            split.train_normal.extend_from_slice(fit);
        } else {
            split.train_dropped.extend_from_slice(fit);
        }
    }
    for part in [
        &mut split.train_normal,
        &mut split.train_dropped,
        &mut split.validation,
        &mut split.test,
    ] {
        part.sort_unstable();
    }
    Ok(split)
}

/// Keeps `round(frac * count)` rows of each class, chosen uniformly.
/// Returns the kept indices sorted ascending.
pub fn stratified_subsample(labels: &[u8], frac: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("subsample fraction must be in (0,1], got {frac}")));
    }
    let mut keep = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        rng.shuffle(&mut idx);
        let n = (frac * idx.len() as f64).round() as usize;
        keep.extend_from_slice(&idx[..n]);
    }
    if keep.is_empty() {
        return Err(Error::Insufficient { what: "subsampled rows", need: 1, have: 0 });
    }
    keep.sort_unstable();
    Ok(keep)
}
