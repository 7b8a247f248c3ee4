//! One-hot encoding and per-feature scaling, fit once and reused.
//!
//! Categorical columns expand in place into one indicator column per
//! category seen at fit time, so the output keeps the declared column order:
//! continuous columns stay single features, each categorical column becomes
//! a block. Scaling is then fit per output feature, indicators included.
//!
//! [`prepare`] is the leakage-safe entry point: it fits on the normal
//! training rows of a split and applies the frozen parameters to validation
//! and test.

use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::data::split::Split;
use crate::data::table::{ColumnKind, Dataset, Table};
use crate::error::{Error, Result};

/// How each output feature is rescaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    /// Subtract the mean, divide by the population standard deviation.
    /// Constant features map to zero.
    Standardize,
    /// Map the observed [min, max] onto [-1, 1]. Constant features map to
    /// zero.
    MinmaxPm1,
}

/// Frozen encoding parameters: category vocabularies and per-feature affine
/// scaling. Applying the transform never changes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub method: ScalingMethod,
    /// Sorted category values per categorical column, in schema order.
    pub vocab: Vec<Vec<String>>,
    /// Per output feature, subtracted first.
    pub offset: Vec<f64>,
    /// Per output feature, divided after the offset. Never zero.
    pub scale: Vec<f64>,
    /// Output feature names: continuous names as-is, `col=value` for
    /// indicators.
    pub feature_names: Vec<String>,
}

/// A transform applied to one table.
#[derive(Clone, Debug)]
pub struct Applied {
    pub dataset: Dataset,
    /// Count of categorical cells whose value was not in the vocabulary.
    /// Each such cell encodes as an all-zero block.
    pub unseen: usize,
}

impl FittedTransform {
    /// Fits vocabularies and scaling on every row of `table`. Pass the
    /// training slice only; see [`prepare`].
    pub fn fit(table: &Table, method: ScalingMethod) -> Result<FittedTransform> {
        if table.n == 0 {
            return Err(Error::Insufficient { what: "transform fit", need: 1, have: 0 });
        }
        let mut vocab = Vec::with_capacity(table.cats.len());
        for col in &table.cats {
            let mut values: Vec<String> = col.clone();
            values.sort();
            values.dedup();
            vocab.push(values);
        }
        let mut t = FittedTransform {
            method,
            vocab,
            offset: Vec::new(),
            scale: Vec::new(),
            feature_names: Vec::new(),
        };
        t.feature_names = t.build_names(table)?;
        let width = t.feature_names.len();

        let mut encoded = vec![0.0; table.n * width];
        let mut unseen = 0;
        for i in 0..table.n {
            t.encode_row(table, i, &mut encoded[i * width..(i + 1) * width], &mut unseen);
        }
        debug_assert_eq!(unseen, 0, "fit rows define the vocabulary");

        for j in 0..width {
            let col = (0..table.n).map(|i| encoded[i * width + j]);
            let (offset, scale) = match method {
                ScalingMethod::Standardize => {
                    let mean = col.clone().sum::<f64>() / table.n as f64;
                    let var =
                        col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / table.n as f64;
                    let std = var.sqrt();
                    (mean, if std == 0.0 { 1.0 } else { std })
                }
                ScalingMethod::MinmaxPm1 => {
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for v in col {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    let half = (hi - lo) / 2.0;
                    ((hi + lo) / 2.0, if half == 0.0 { 1.0 } else { half })
                }
            };
            t.offset.push(offset);
            t.scale.push(scale);
        }
        Ok(t)
    }

    /// Output feature count.
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Encodes and scales a table with the frozen parameters.
    pub fn apply(&self, table: &Table) -> Result<Applied> {
        let names = self.build_names(table)?;
        if names != self.feature_names {
            return Err(Error::Invalid(
                "table schema does not match the fitted transform".into(),
            ));
        }
        let width = self.width();
        let mut out = vec![0.0; table.n * width];
        let mut unseen = 0;
        for i in 0..table.n {
            let row = &mut out[i * width..(i + 1) * width];
            self.encode_row(table, i, row, &mut unseen);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.offset[j]) / self.scale[j];
            }
        }
        Ok(Applied {
            dataset: Dataset {
                features: Tensor::new([table.n, width], out)?,
                labels: table.labels.clone(),
                feature_names: self.feature_names.clone(),
            },
            unseen,
        })
    }

    /// Output names in declared column order, categorical columns expanded
    /// against the vocabulary.
    fn build_names(&self, table: &Table) -> Result<Vec<String>> {
        if table.cats.len() != self.vocab.len() {
            return Err(Error::Invalid(format!(
                "table has {} categorical columns, transform was fit on {}",
                table.cats.len(),
                self.vocab.len()
            )));
        }
        let mut names = Vec::new();
        let mut cat_idx = 0;
        for col in &table.schema.columns {
            match col.kind {
                ColumnKind::Continuous => names.push(col.name.clone()),
                ColumnKind::Categorical => {
                    for v in &self.vocab[cat_idx] {
                        names.push(format!("{}={v}", col.name));
                    }
                    cat_idx += 1;
                }
                ColumnKind::Label => {}
            }
        }
        Ok(names)
    }

    /// Writes one row's unscaled encoding into `out` (assumed zeroed).
    fn encode_row(&self, table: &Table, row: usize, out: &mut [f64], unseen: &mut usize) {
        let mut j = 0;
        let mut cont_idx = 0;
        let mut cat_idx = 0;
        for col in &table.schema.columns {
            match col.kind {
                ColumnKind::Continuous => {
                    out[j] = table.cont_at(row, cont_idx);
                    cont_idx += 1;
                    j += 1;
                }
                ColumnKind::Categorical => {
                    let vocab = &self.vocab[cat_idx];
                    let value = &table.cats[cat_idx][row];
                    match vocab.binary_search(value) {
                        Ok(pos) => out[j + pos] = 1.0,
                        Err(_) => *unseen += 1,
                    }
                    j += vocab.len();
                    cat_idx += 1;
                }
                ColumnKind::Label => {}
            }
        }
    }
}

/// Everything the experiment needs from one split: the frozen transform and
/// the three encoded parts.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub transform: FittedTransform,
    pub train_normal: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Unseen-category cells hit while encoding validation and test.
    pub unseen: usize,
}

/// Fits the transform on the split's normal training rows only and applies
/// it unchanged to all three parts. This is the path that guarantees nothing
/// is fitted on validation or test data.
pub fn prepare(table: &Table, split: &Split, method: ScalingMethod) -> Result<Prepared> {
    let train = table.select(&split.train_normal);
    let transform = FittedTransform::fit(&train, method)?;
    let train_normal = transform.apply(&train)?;
    let validation = transform.apply(&table.select(&split.validation))?;
    let test = transform.apply(&table.select(&split.test))?;
    Ok(Prepared {
        transform,
        train_normal: train_normal.dataset,
        validation: validation.dataset,
        test: test.dataset,
        unseen: validation.unseen + test.unseen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::{stratified_split, SplitSpec};
    use crate::data::table::{ColumnSpec, Schema};
    use crate::RngStream;

    fn small_table() -> Table {
        Table {
            schema: Schema {
                has_header: true,
                columns: vec![
                    ColumnSpec { name: "a".into(), kind: ColumnKind::Continuous },
                    ColumnSpec { name: "proto".into(), kind: ColumnKind::Categorical },
                    ColumnSpec { name: "b".into(), kind: ColumnKind::Continuous },
                ],
            },
            cont: vec![0.0, 1.0, 10.0, 3.0, 5.0, 2.0],
            cats: vec![vec!["udp".into(), "tcp".into(), "tcp".into()]],
            labels: None,
            n: 3,
        }
    }

    #[test]
    fn one_hot_width_counts_categories_plus_continuous() {
        let t = small_table();
        let f = FittedTransform::fit(&t, ScalingMethod::Standardize).unwrap();
        assert_eq!(f.width(), 2 + 2);
        assert_eq!(f.feature_names, vec!["a", "proto=tcp", "proto=udp", "b"]);
    }

    #[test]
    fn standardized_training_columns_have_zero_mean_unit_std() {
        let t = small_table();
        let f = FittedTransform::fit(&t, ScalingMethod::Standardize).unwrap();
        let a = f.apply(&t).unwrap();
        let x = a.dataset.features;
        let [n, w] = x.shape();
        for j in 0..w {
            let col: Vec<f64> = (0..n).map(|i| x.data()[i * w + j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "column {j} std {}", var.sqrt());
        }
    }

    #[test]
    fn minmax_maps_observed_range_onto_pm1() {
        let mut t = small_table();
        t.cont = vec![0.0, 1.0, 10.0, 3.0, 5.0, 2.0];
        let f = FittedTransform::fit(&t, ScalingMethod::MinmaxPm1).unwrap();
        let a = f.apply(&t).unwrap();
        let col_a: Vec<f64> = (0..3).map(|i| a.dataset.features.data()[i * 4]).collect();
        assert_eq!(col_a[0], -1.0);
        assert_eq!(col_a[1], 1.0);
        assert!(col_a[2] > -1.0 && col_a[2] < 1.0);
    }

    #[test]
    fn constant_columns_map_to_zero() {
        let mut t = small_table();
        t.cont = vec![7.0, 1.0, 7.0, 3.0, 7.0, 2.0];
        for method in [ScalingMethod::Standardize, ScalingMethod::MinmaxPm1] {
            let f = FittedTransform::fit(&t, method).unwrap();
            let a = f.apply(&t).unwrap();
            for i in 0..3 {
                assert_eq!(a.dataset.features.data()[i * 4], 0.0, "{method:?}");
            }
        }
    }

    #[test]
    fn unseen_categories_encode_as_zeros_and_are_counted() {
        let t = small_table();
        let f = FittedTransform::fit(&t, ScalingMethod::Standardize).unwrap();
        let mut probe = t.clone();
        probe.cats[0] = vec!["icmp".into(), "tcp".into(), "icmp".into()];
        let a = f.apply(&probe).unwrap();
        assert_eq!(a.unseen, 2);
        let x = &a.dataset.features;
        for j in 1..3 {
            let want = (0.0 - f.offset[j]) / f.scale[j];
            assert_eq!(x.data()[j], want, "row 0 indicator {j}");
        }
    }

    #[test]
    fn mismatched_tables_are_rejected() {
        let t = small_table();
        let f = FittedTransform::fit(&t, ScalingMethod::Standardize).unwrap();
        let mut other = t.clone();
        other.schema.columns[0].name = "renamed".into();
        assert!(f.apply(&other).is_err());
    }

    #[test]
    fn prepare_fits_on_normal_training_rows_only() {
        let mut rng = RngStream::from_seed(5);
        let n = 80;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
        let mut cont = Vec::with_capacity(n * 2);
        for i in 0..n {
            cont.push(i as f64);
            cont.push(f64::from(labels[i]) * 100.0);
        }
        let table = Table {
            schema: Schema::continuous(2, true),
            cont,
            cats: vec![],
            labels: Some(labels.clone()),
            n,
        };
        let spec = SplitSpec { alpha: 0.2, ..SplitSpec::default() };
        let split = stratified_split(&labels, &spec, &mut rng).unwrap();
        let p = prepare(&table, &split, ScalingMethod::Standardize).unwrap();

        assert_eq!(p.train_normal.n(), split.train_normal.len());
        assert!(p.train_normal.labels.as_ref().unwrap().iter().all(|&l| l == 0));

        // Perturbing rows outside train_normal must not change the fit.
        let mut poked = table.clone();
        let victim = split.test[0];
        poked.cont[victim * 2] += 1e6;
        let mut rng2 = RngStream::from_seed(5);
        let split2 = stratified_split(&labels, &spec, &mut rng2).unwrap();
        let p2 = prepare(&poked, &split2, ScalingMethod::Standardize).unwrap();
        assert_eq!(p.transform, p2.transform);
    }
}
