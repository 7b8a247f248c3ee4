//! Schemas, raw tables, and CSV input/output.
//!
//! A [`Schema`] declares each CSV column as continuous, categorical, or the
//! label. Loading parses continuous cells as finite numbers, keeps
//! categorical cells as strings, and restricts labels to 0 and 1 (anomaly).
//! Ingestion errors carry the 1-based file line, counting the header, so the
//! reported number matches what an editor shows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::error::{io_err, Error, Result};

/// How to treat one CSV column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Label,
}

/// One declared column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Declared layout of a CSV file: column order, column kinds, and whether
/// the file starts with a header row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_true")]
    pub has_header: bool,
    pub columns: Vec<ColumnSpec>,
}

fn default_true() -> bool {
    true
}

impl Schema {
    /// A schema of `width` continuous columns `c0..` plus a trailing label
    /// column, as produced by the synthetic generators.
    pub fn continuous(width: usize, labeled: bool) -> Schema {
        let mut columns: Vec<ColumnSpec> = (0..width)
            .map(|i| ColumnSpec { name: format!("c{i}"), kind: ColumnKind::Continuous })
            .collect();
        if labeled {
            columns.push(ColumnSpec { name: "label".into(), kind: ColumnKind::Label });
        }
        Schema { has_header: true, columns }
    }

    /// Reads a schema from a JSON file.
    pub fn load_json(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let schema: Schema = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    /// Checks name uniqueness and that at most one column is the label.
    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("schema declares no columns".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(Error::Config("schema has a column with an empty name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("schema repeats column name `{}`", c.name)));
            }
        }
        let labels = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels > 1 {
            return Err(Error::Config(format!("schema declares {labels} label columns")));
        }
        if self.columns.len() == labels {
            return Err(Error::Config("schema has no feature columns".into()));
        }
        Ok(())
    }

    /// Indices of continuous columns, in declared order.
    pub fn continuous_cols(&self) -> Vec<usize> {
        self.cols_of(ColumnKind::Continuous)
    }

    /// Indices of categorical columns, in declared order.
    pub fn categorical_cols(&self) -> Vec<usize> {
        self.cols_of(ColumnKind::Categorical)
    }

    fn cols_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the label column, if declared.
    pub fn label_col(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == ColumnKind::Label)
    }
}

/// A parsed table: continuous cells as numbers, categorical cells as
/// strings, labels separated out. Row order matches the file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: Schema,
    /// Row-major continuous block, `[n, continuous column count]`.
    pub cont: Vec<f64>,
    /// One vector per categorical column (schema order), each of length `n`.
    pub cats: Vec<Vec<String>>,
    /// 0/1 per row when the schema declares a label column.
    pub labels: Option<Vec<u8>>,
    pub n: usize,
}

impl Table {
    /// Number of continuous columns.
    pub fn n_cont(&self) -> usize {
        self.schema.continuous_cols().len()
    }

    /// Reads one continuous cell.
    pub fn cont_at(&self, row: usize, cont_col: usize) -> f64 {
        self.cont[row * self.n_cont() + cont_col]
    }

    /// A new table holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Table {
        let w = self.n_cont();
        let mut cont = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            cont.extend_from_slice(&self.cont[r * w..(r + 1) * w]);
        }
        Table {
            schema: self.schema.clone(),
            cont,
            cats: self
                .cats
                .iter()
                .map(|col| rows.iter().map(|&r| col[r].clone()).collect())
                .collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            n: rows.len(),
        }
    }

    /// Loads and validates a CSV file against the schema.
    pub fn load_csv(path: &Path, schema: &Schema) -> Result<Table> {
        schema.validate()?;
        let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(schema.has_header)
            .flexible(false)
            .from_reader(file);

        let cont_cols = schema.continuous_cols();
        let cat_cols = schema.categorical_cols();
        let label_col = schema.label_col();
        let mut cont = Vec::new();
        let mut cats: Vec<Vec<String>> = vec![Vec::new(); cat_cols.len()];
        let mut labels: Option<Vec<u8>> = label_col.map(|_| Vec::new());
        let mut n = 0usize;

        for record in reader.records() {
            let record = record.map_err(|e| {
                let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::Ingest { row, what: e.to_string() }
            })?;
            let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != schema.columns.len() {
                return Err(Error::Ingest {
                    row,
                    what: format!(
                        "expected {} columns, found {}",
                        schema.columns.len(),
                        record.len()
                    ),
                });
            }
            for &c in &cont_cols {
                let cell = record[c].trim();
                let v: f64 = cell.parse().map_err(|_| Error::Ingest {
                    row,
                    what: format!(
                        "column `{}`: cannot parse `{cell}` as a number",
                        schema.columns[c].name
                    ),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingest {
                        row,
                        what: format!("column `{}`: non-finite value `{cell}`", schema.columns[c].name),
                    });
                }
                cont.push(v);
            }
            for (k, &c) in cat_cols.iter().enumerate() {
                cats[k].push(record[c].trim().to_string());
            }
            if let (Some(c), Some(out)) = (label_col, labels.as_mut()) {
                let cell = record[c].trim();
                let v: f64 = cell.parse().map_err(|_| Error::Ingest {
                    row,
                    what: format!("label `{cell}` is not a number"),
                })?;
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Ingest {
                        row,
                        what: format!("label `{cell}` is not 0 or 1"),
                    });
                }
                out.push(v as u8);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Ingest { row: 1, what: "file has no data rows".into() });
        }
        Ok(Table { schema: schema.clone(), cont, cats, labels, n })
    }

    /// Writes the table back out as CSV with a header row. Loading the
    /// result with the same schema reproduces the table exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_err(path, io),
            other => Error::Invalid(format!("{other:?}")),
        })?;
        let names: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        w.write_record(&names).map_err(|e| Error::Invalid(e.to_string()))?;
        let cont_cols = self.schema.continuous_cols();
        let cat_cols = self.schema.categorical_cols();
        for i in 0..self.n {
            let mut record: Vec<String> = vec![String::new(); self.schema.columns.len()];
            for (j, &c) in cont_cols.iter().enumerate() {
                record[c] = crate::score::fmt_f64(self.cont_at(i, j));
            }
            for (k, &c) in cat_cols.iter().enumerate() {
                record[c] = self.cats[k][i].clone();
            }
            if let (Some(c), Some(l)) = (self.schema.label_col(), &self.labels) {
                record[c] = l[i].to_string();
            }
            w.write_record(&record).map_err(|e| Error::Invalid(e.to_string()))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
        Ok(())
    }
}

/// A model-ready matrix: encoded and scaled features with labels and
/// per-feature names carried along.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Option<Vec<u8>>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }
}
