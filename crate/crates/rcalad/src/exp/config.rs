//! The experiment file format.
//!
//! An experiment is one TOML document with up to six tables: `[dataset]`,
//! `[split]`, `[arch]`, `[train]`, `[score]`, and `[run]`. Only `[dataset]`
//! is required; every other key has a documented default. Unknown keys are
//! hard errors, because a silently ignored typo would quietly change what a
//! config reproduces.
//!
//! ```toml
//! [dataset]
//! kind = "arrhythmia_like"
//!
//! [train]
//! batch_size = 32
//! max_epochs = 1000
//!
//! [score]
//! kind = "all"
//!
//! [run]
//! seed = 7
//! runs = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{default_alpha, ScalingMethod, SplitSpec, ToyKind, ToySpec};
use crate::error::{io_err, Error, Result};
use crate::net::{default_arch, ArchPreset, ArchSet};
use crate::score::{OrientationConvention, ScoreKind};
use crate::train::TrainConfig;

/// Where the experiment's rows come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// A CSV file read against a JSON column schema.
    Csv,
    /// Synthetic 2-D ring: normal points near the unit circle.
    GaussianRing,
    /// Synthetic 2-D blobs: normal and anomalous clusters.
    TwoGaussians,
    /// Synthetic stand-in shaped like the small clinical table.
    ArrhythmiaLike,
    /// Synthetic stand-in shaped like the network-intrusion table.
    KddLike,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Csv => "csv",
            DatasetKind::GaussianRing => "gaussian_ring",
            DatasetKind::TwoGaussians => "two_gaussians",
            DatasetKind::ArrhythmiaLike => "arrhythmia_like",
            DatasetKind::KddLike => "kdd_like",
        }
    }

    /// True for the 2-D generators that produce fixed train/test tables
    /// instead of one pool to split.
    pub fn is_toy(self) -> bool {
        matches!(self, DatasetKind::GaussianRing | DatasetKind::TwoGaussians)
    }
}

fn default_scaling() -> ScalingMethod {
    ScalingMethod::Standardize
}

/// The `[dataset]` table. `kind` selects the source; the other fields apply
/// only to some kinds and are rejected elsewhere.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Nickname used for the contamination default and report labeling;
    /// defaults to the kind's name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Rows file (`kind = "csv"` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Column schema JSON (`kind = "csv"` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Per-class subsample fraction applied once, before any splitting.
    /// Not available for the toy kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<f64>,
    #[serde(default = "default_scaling")]
    pub scaling: ScalingMethod,
    /// Toy kinds: rows in the all-normal training table. Default 2000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train_normal: Option<usize>,
    /// Toy kinds: normal rows in the test table. Default 500.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test_normal: Option<usize>,
    /// Toy kinds: anomalous rows in the test table. Default 100.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test_anomaly: Option<usize>,
    /// Toy kinds: noise level override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

impl DatasetConfig {
    /// A bare config for one kind, everything else defaulted.
    pub fn of_kind(kind: DatasetKind) -> DatasetConfig {
        DatasetConfig {
            kind,
            name: None,
            path: None,
            schema: None,
            subsample: None,
            scaling: default_scaling(),
            n_train_normal: None,
            n_test_normal: None,
            n_test_anomaly: None,
            noise_std: None,
        }
    }

    /// The label used for the contamination default and in reports.
    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.kind.name())
    }

    /// The toy generator specs: an all-normal training table and a labeled
    /// test table. Only valid for the toy kinds.
    pub fn toy_specs(&self) -> (ToySpec, ToySpec) {
        let kind = match self.kind {
            DatasetKind::GaussianRing => ToyKind::GaussianRing,
            _ => ToyKind::TwoGaussians,
        };
        let base = match kind {
            ToyKind::GaussianRing => ToySpec::ring(0, 0),
            ToyKind::TwoGaussians => ToySpec::blobs(0, 0),
        };
        let noise = self.noise_std.unwrap_or(base.noise_std);
        let train = ToySpec {
            kind,
            n_normal: self.n_train_normal.unwrap_or(2000),
            n_anomaly: 0,
            noise_std: noise,
        };
        let test = ToySpec {
            kind,
            n_normal: self.n_test_normal.unwrap_or(500),
            n_anomaly: self.n_test_anomaly.unwrap_or(100),
            noise_std: noise,
        };
        (train, test)
    }

    pub fn validate(&self) -> Result<()> {
        let require_none = |what: &str, absent: bool| {
            if absent {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "dataset.{what} does not apply when dataset.kind = \"{}\"",
                    self.kind.name()
                )))
            }
        };
        match self.kind {
            DatasetKind::Csv => {
                if self.path.is_none() {
                    return Err(Error::Config(
                        "dataset.path is required when dataset.kind = \"csv\"".into(),
                    ));
                }
                if self.schema.is_none() {
                    return Err(Error::Config(
                        "dataset.schema is required when dataset.kind = \"csv\"".into(),
                    ));
                }
            }
            _ => {
                require_none("path", self.path.is_none())?;
                require_none("schema", self.schema.is_none())?;
            }
        }
        if self.kind.is_toy() {
            require_none("subsample", self.subsample.is_none())?;
            if let Some(s) = [self.n_train_normal, self.n_test_normal]
                .into_iter()
                .flatten()
                .find(|&n| n < 2)
            {
                return Err(Error::Config(format!(
                    "toy tables need at least 2 normal rows, got {s}"
                )));
            }
            if let Some(ns) = self.noise_std {
                if !(ns.is_finite() && ns >= 0.0) {
                    return Err(Error::Config(format!(
                        "dataset.noise_std must be finite and >= 0, got {ns}"
                    )));
                }
            }
        } else {
            for (field, value) in [
                ("n_train_normal", self.n_train_normal),
                ("n_test_normal", self.n_test_normal),
                ("n_test_anomaly", self.n_test_anomaly),
            ] {
                require_none(field, value.is_none())?;
            }
            require_none("noise_std", self.noise_std.is_none())?;
            if let Some(f) = self.subsample {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!(
                        "dataset.subsample must lie in (0, 1], got {f}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The `[split]` table. The contamination rate `alpha` may be omitted, in
/// which case the dataset label's convention applies (0.2 when there is
/// none).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Fraction of each class kept out of the test set.
    pub train_frac: f64,
    /// Fraction of the kept rows set aside for validation.
    pub val_frac: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for SplitConfig {
    fn default() -> SplitConfig {
        let base = SplitSpec::default();
        SplitConfig {
            train_frac: base.train_frac,
            val_frac: base.val_frac,
            alpha: None,
        }
    }
}

/// The `[arch]` table. Omitting it picks the preset matching the dataset
/// kind; omitting `latent_dim` uses the preset's own width.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// One of `tabular`, `kdd`, `toy`.
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
}

/// The `[score]` table: which score column drives thresholding, and the
/// signs that orient every column so larger means more anomalous.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    /// One of `l1`, `l2`, `logits`, `features`, `fm`, `all`. If the trained
    /// variant lacks the discriminators this score reads, the run falls
    /// back (feature distance when `d_xx` exists, else the L1 residual) and
    /// the report records the score actually used.
    pub kind: String,
    pub orientation: OrientationConvention,
}

impl Default for ScoreConfig {
    fn default() -> ScoreConfig {
        ScoreConfig {
            kind: "all".into(),
            orientation: OrientationConvention::default(),
        }
    }
}

/// The `[run]` table: the master seed, how many runs to aggregate, and
/// whether wall-clock timings go into the report (off by default so that
/// artifacts are byte-reproducible).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub runs: usize,
    pub emit_timing: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig { seed: 7, runs: 1, emit_timing: false }
    }
}

/// One experiment, fully described: dataset, split, architecture, training
/// hyperparameters, score choice, and run plan.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// A default experiment over one dataset kind.
    pub fn for_dataset(kind: DatasetKind) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::of_kind(kind),
            split: SplitConfig::default(),
            arch: None,
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
            run: RunConfig::default(),
        }
    }

    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses, and validates a config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        for (name, v) in [
            ("split.train_frac", self.split.train_frac),
            ("split.val_frac", self.split.val_frac),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if let Some(a) = self.split.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("split.alpha must lie in [0, 1], got {a}")));
            }
        }
        ScoreKind::parse(&self.score.kind)?;
        if let Some(arch) = &self.arch {
            ArchPreset::parse(&arch.preset)?;
            if arch.latent_dim == Some(0) {
                return Err(Error::Config("arch.latent_dim must be at least 1".into()));
            }
        }
        if self.run.runs == 0 {
            return Err(Error::Config("run.runs must be at least 1".into()));
        }
        Ok(())
    }

    /// The contamination rate in effect: the explicit `split.alpha`, else
    /// the dataset label's convention, else 0.2.
    pub fn alpha(&self) -> f64 {
        self.split
            .alpha
            .or_else(|| default_alpha(self.dataset.label()))
            .unwrap_or(0.2)
    }

    /// The split parameters with the contamination rate resolved.
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.split.train_frac,
            val_frac: self.split.val_frac,
            alpha: self.alpha(),
        }
    }

    /// The requested score column. Validated configs cannot fail here.
    pub fn score_kind(&self) -> Result<ScoreKind> {
        ScoreKind::parse(&self.score.kind)
    }

    /// The architecture preset in effect: the explicit `arch.preset`, else
    /// the preset matching the dataset kind.
    pub fn arch_preset(&self) -> Result<ArchPreset> {
        match &self.arch {
            Some(a) => ArchPreset::parse(&a.preset),
            None => Ok(match self.dataset.kind {
                DatasetKind::GaussianRing | DatasetKind::TwoGaussians => ArchPreset::Toy,
                DatasetKind::KddLike => ArchPreset::Kdd,
                DatasetKind::Csv | DatasetKind::ArrhythmiaLike => ArchPreset::Tabular,
            }),
        }
    }

    /// The latent width in effect.
    pub fn latent_dim(&self) -> Result<usize> {
        let preset = self.arch_preset()?;
        Ok(self
            .arch
            .as_ref()
            .and_then(|a| a.latent_dim)
            .unwrap_or_else(|| preset.default_latent_dim()))
    }

    /// Builds the six network specs for a data width.
    pub fn arch_set(&self, input_dim: usize) -> Result<ArchSet> {
        default_arch(self.arch_preset()?, input_dim, self.latent_dim()?)
    }

    /// SHA-256 over the canonical JSON form, as lowercase hex. Checkpoints
    /// and reports carry this so artifacts can be traced to their exact
    /// settings.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&json);
        let digest = h.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_every_default() {
        let cfg = ExperimentConfig::from_toml_str(
            "[dataset]\nkind = \"arrhythmia_like\"\n\n[run]\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.run.runs, 1);
        assert!(!cfg.run.emit_timing);
        assert_eq!(cfg.split.train_frac, 0.8);
        assert_eq!(cfg.split.val_frac, 0.25);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.score.kind, "all");
        assert_eq!(cfg.alpha(), 0.15, "named dataset supplies its contamination rate");
        assert_eq!(cfg.arch_preset().unwrap(), ArchPreset::Tabular);
        assert_eq!(cfg.latent_dim().unwrap(), 64);
    }

    #[test]
    fn misspelled_keys_are_named_in_the_error() {
        let err = ExperimentConfig::from_toml_str(
            "[dataset]\nkind = \"kdd_like\"\n\n[train]\nbatch_sizes = 4\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("batch_sizes"), "{err}");

        let err = ExperimentConfig::from_toml_str("[datasets]\nkind = \"kdd_like\"\n").unwrap_err();
        assert!(err.to_string().contains("datasets"), "{err}");
    }

    #[test]
    fn alpha_resolution_order() {
        let mut cfg = ExperimentConfig::for_dataset(DatasetKind::KddLike);
        assert_eq!(cfg.alpha(), 0.20);
        cfg.split.alpha = Some(0.5);
        assert_eq!(cfg.alpha(), 0.5);
        let ring = ExperimentConfig::for_dataset(DatasetKind::GaussianRing);
        assert_eq!(ring.alpha(), 0.2, "unnamed datasets fall back to 0.2");
        let mut csv = ExperimentConfig::for_dataset(DatasetKind::Csv);
        csv.dataset.name = Some("arrhythmia".into());
        assert_eq!(csv.alpha(), 0.15, "the nickname drives the convention");
    }

    #[test]
    fn per_kind_field_rules() {
        let mut cfg = ExperimentConfig::for_dataset(DatasetKind::Csv);
        assert!(cfg.validate().unwrap_err().to_string().contains("dataset.path"));
        cfg.dataset.path = Some("rows.csv".into());
        assert!(cfg.validate().unwrap_err().to_string().contains("dataset.schema"));
        cfg.dataset.schema = Some("schema.json".into());
        cfg.validate().unwrap();

        let mut toy = ExperimentConfig::for_dataset(DatasetKind::GaussianRing);
        toy.dataset.subsample = Some(0.5);
        assert!(toy.validate().unwrap_err().to_string().contains("subsample"));

        let mut bench = ExperimentConfig::for_dataset(DatasetKind::ArrhythmiaLike);
        bench.dataset.n_test_anomaly = Some(10);
        assert!(bench.validate().unwrap_err().to_string().contains("n_test_anomaly"));
        bench.dataset.n_test_anomaly = None;
        bench.dataset.subsample = Some(1.5);
        assert!(bench.validate().is_err());
    }

    #[test]
    fn toy_specs_default_to_the_documented_sizes() {
        let cfg = ExperimentConfig::for_dataset(DatasetKind::GaussianRing);
        let (train, test) = cfg.dataset.toy_specs();
        assert_eq!(train.n_normal, 2000);
        assert_eq!(train.n_anomaly, 0);
        assert_eq!(test.n_normal, 500);
        assert_eq!(test.n_anomaly, 100);
        assert_eq!(train.noise_std, 0.1);

        let mut cfg = ExperimentConfig::for_dataset(DatasetKind::TwoGaussians);
        cfg.dataset.n_train_normal = Some(64);
        cfg.dataset.noise_std = Some(0.05);
        let (train, test) = cfg.dataset.toy_specs();
        assert_eq!(train.n_normal, 64);
        assert_eq!(train.noise_std, 0.05);
        assert_eq!(test.noise_std, 0.05);
    }

    #[test]
    fn orientation_table_accepts_partial_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            "[dataset]\nkind = \"gaussian_ring\"\n\n[score]\nkind = \"fm\"\n\n[score.orientation]\na_fm = \"negate\"\n",
        )
        .unwrap();
        use crate::score::Sign;
        assert_eq!(cfg.score.orientation.a_fm, Sign::Negate);
        assert_eq!(cfg.score.orientation.a_logits, Sign::Negate, "untouched default");
        assert_eq!(cfg.score.orientation.a_l1, Sign::AsIs);
        assert_eq!(cfg.score_kind().unwrap(), ScoreKind::Fm);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::for_dataset(DatasetKind::GaussianRing);
        let b = ExperimentConfig::for_dataset(DatasetKind::GaussianRing);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let mut c = ExperimentConfig::for_dataset(DatasetKind::GaussianRing);
        c.run.seed = 8;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn toml_roundtrip_preserves_the_config() {
        let mut cfg = ExperimentConfig::for_dataset(DatasetKind::KddLike);
        cfg.dataset.subsample = Some(0.1);
        cfg.run.runs = 3;
        cfg.train.max_epochs = 5;
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.config_hash(), cfg.config_hash());
    }

    #[test]
    fn load_reports_the_file_path() {
        let err = ExperimentConfig::load(Path::new("/no/such/config.toml")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
