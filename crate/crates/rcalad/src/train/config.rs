//! Training hyperparameters, variant toggles, and input distributions.

use serde::{Deserialize, Serialize};

use crate::autodiff::optim::AdamConfig;
use crate::autodiff::rng::RngStream;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Which optional objective components are active.
///
/// The base objective always trains `D_xz` on the encoder and generator
/// pairings. Each flag adds one discriminator (a real/fake term pair) or,
/// for `sigma`, one extra term routed through `D_xz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    pub dxx: bool,
    pub dzz: bool,
    pub dxxzz: bool,
    pub sigma: bool,
}

impl Toggles {
    pub fn all() -> Toggles {
        Toggles { dxx: true, dzz: true, dxxzz: true, sigma: true }
    }

    pub fn none() -> Toggles {
        Toggles { dxx: false, dzz: false, dxxzz: false, sigma: false }
    }

    /// Number of expectation terms in the discriminator objective.
    pub fn term_count(&self) -> usize {
        let pair = |on: bool| if on { 2 } else { 0 };
        2 + pair(self.dxx) + pair(self.dzz) + pair(self.dxxzz) + usize::from(self.sigma)
    }

    /// Number of terms in the generator/encoder objective (the fake-side
    /// routes plus the supplementary route).
    pub fn fake_term_count(&self) -> usize {
        1 + usize::from(self.dxx)
            + usize::from(self.dzz)
            + usize::from(self.dxxzz)
            + usize::from(self.sigma)
    }
}

/// The named model family members, from the plain bidirectional GAN up to
/// the full model, as toggle presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ali,
    Alice,
    Alad,
    Calad,
    Ralad,
    Rcalad,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "ali" => Ok(Variant::Ali),
            "alice" => Ok(Variant::Alice),
            "alad" => Ok(Variant::Alad),
            "calad" => Ok(Variant::Calad),
            "ralad" => Ok(Variant::Ralad),
            "rcalad" => Ok(Variant::Rcalad),
            other => Err(Error::Config(format!(
                "unknown variant `{other}`; expected one of ali, alice, alad, calad, ralad, rcalad"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Ali => "ali",
            Variant::Alice => "alice",
            Variant::Alad => "alad",
            Variant::Calad => "calad",
            Variant::Ralad => "ralad",
            Variant::Rcalad => "rcalad",
        }
    }

    /// The toggle set defining this variant.
    pub fn toggles(&self) -> Toggles {
        let t = Toggles::none;
        match self {
            Variant::Ali => t(),
            Variant::Alice => Toggles { dxx: true, ..t() },
            Variant::Alad => Toggles { dxx: true, dzz: true, ..t() },
            Variant::Calad => Toggles { dxx: true, dzz: true, dxxzz: true, ..t() },
            Variant::Ralad => Toggles { dxx: true, dzz: true, sigma: true, ..t() },
            Variant::Rcalad => Toggles::all(),
        }
    }

    pub fn all() -> [Variant; 6] {
        [
            Variant::Ali,
            Variant::Alice,
            Variant::Alad,
            Variant::Calad,
            Variant::Ralad,
            Variant::Rcalad,
        ]
    }
}

/// The latent prior: a standard normal over the model's latent width.
#[derive(Clone, Copy, Debug)]
pub struct LatentPrior {
    pub dim: usize,
}

/// Draws an `[n, dim]` batch of i.i.d. standard-normal latent codes.
pub fn sample_latent(prior: LatentPrior, n: usize, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(n, prior.dim);
    rng.fill_normal(t.data_mut(), 0.0, 1.0);
    t
}

/// The shape of the supplementary input distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaKind {
    /// Standard normal per coordinate.
    #[serde(rename = "normal_0_1")]
    Normal01,
    /// Normal with variance 2 per coordinate.
    #[serde(rename = "normal_0_2")]
    Normal02,
    /// Uniform on [-1, 1] per coordinate.
    #[serde(rename = "uniform_m1_1")]
    UniformM11,
}

impl SigmaKind {
    pub fn parse(s: &str) -> Result<SigmaKind> {
        match s {
            "normal_0_1" => Ok(SigmaKind::Normal01),
            "normal_0_2" => Ok(SigmaKind::Normal02),
            "uniform_m1_1" => Ok(SigmaKind::UniformM11),
            other => Err(Error::Config(format!(
                "unknown supplementary distribution `{other}`; expected normal_0_1, normal_0_2, or uniform_m1_1"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SigmaKind::Normal01 => "normal_0_1",
            SigmaKind::Normal02 => "normal_0_2",
            SigmaKind::UniformM11 => "uniform_m1_1",
        }
    }
}

/// An input-space distribution the model learns to reject: its draws are
/// fed to `D_xz` as known-fake pairs alongside their encodings.
#[derive(Clone, Copy, Debug)]
pub struct SupplementaryDistribution {
    pub kind: SigmaKind,
    pub dim: usize,
}

/// Draws an `[n, dim]` batch from the supplementary distribution.
pub fn sample_supplementary(dist: SupplementaryDistribution, n: usize, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(n, dist.dim);
    match dist.kind {
        SigmaKind::Normal01 => rng.fill_normal(t.data_mut(), 0.0, 1.0),
        SigmaKind::Normal02 => rng.fill_normal(t.data_mut(), 0.0, std::f64::consts::SQRT_2),
        SigmaKind::UniformM11 => rng.fill_uniform(t.data_mut(), -1.0, 1.0),
    }
    t
}

/// Hyperparameters for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Adam learning rate, shared by both parameter groups.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub use_dxx: bool,
    pub use_dzz: bool,
    pub use_dxxzz: bool,
    pub use_sigma: bool,
    pub sigma_kind: SigmaKind,
    /// Supplementary batch rows as a fraction of the data batch.
    pub sigma_batch_ratio: f64,
    pub d_steps_per_g_step: usize,
    /// Use the literal minimax generator loss instead of the non-saturating
    /// form.
    pub saturating: bool,
    /// Power iterations per spectral normalization during training.
    pub sn_iters: usize,
    /// Epochs between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            max_epochs: 100,
            use_dxx: true,
            use_dzz: true,
            use_dxxzz: true,
            use_sigma: true,
            sigma_kind: SigmaKind::Normal01,
            sigma_batch_ratio: 1.0,
            d_steps_per_g_step: 1,
            saturating: false,
            sn_iters: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn toggles(&self) -> Toggles {
        Toggles {
            dxx: self.use_dxx,
            dzz: self.use_dzz,
            dxxzz: self.use_dxxzz,
            sigma: self.use_sigma,
        }
    }

    /// Overwrites the four toggle flags with a named variant's preset.
    pub fn set_variant(&mut self, v: Variant) {
        let t = v.toggles();
        self.use_dxx = t.dxx;
        self.use_dzz = t.dzz;
        self.use_dxxzz = t.dxxzz;
        self.use_sigma = t.sigma;
    }

    /// The variant name matching the current toggles, or `custom`.
    pub fn variant_name(&self) -> &'static str {
        Variant::all()
            .into_iter()
            .find(|v| v.toggles() == self.toggles())
            .map(|v| v.name())
            .unwrap_or("custom")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 (batch norm needs two rows), got {}",
                self.batch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and nonnegative, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.sigma_batch_ratio.is_finite() && self.sigma_batch_ratio > 0.0) {
            return Err(Error::Config(format!(
                "sigma_batch_ratio must be positive, got {}",
                self.sigma_batch_ratio
            )));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::Config("d_steps_per_g_step must be at least 1".into()));
        }
        if self.sn_iters == 0 {
            return Err(Error::Config("sn_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_toggle_presets() {
        use Variant::*;
        let cases = [
            (Ali, (false, false, false, false)),
            (Alice, (true, false, false, false)),
            (Alad, (true, true, false, false)),
            (Calad, (true, true, true, false)),
            (Ralad, (true, true, false, true)),
            (Rcalad, (true, true, true, true)),
        ];
        for (v, (dxx, dzz, dxxzz, sigma)) in cases {
            let t = v.toggles();
            assert_eq!((t.dxx, t.dzz, t.dxxzz, t.sigma), (dxx, dzz, dxxzz, sigma), "{v:?}");
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("alady").is_err());
    }

    #[test]
    fn term_counts_by_variant() {
        assert_eq!(Variant::Ali.toggles().term_count(), 2);
        assert_eq!(Variant::Alice.toggles().term_count(), 4);
        assert_eq!(Variant::Alad.toggles().term_count(), 6);
        assert_eq!(Variant::Calad.toggles().term_count(), 8);
        assert_eq!(Variant::Ralad.toggles().term_count(), 7);
        assert_eq!(Variant::Rcalad.toggles().term_count(), 9);
        assert_eq!(Variant::Rcalad.toggles().fake_term_count(), 5);
        assert_eq!(Variant::Alad.toggles().fake_term_count(), 3);
        assert_eq!(Variant::Ali.toggles().fake_term_count(), 1);
    }

    #[test]
    fn latent_sampling_is_seed_repeatable_and_centered() {
        let prior = LatentPrior { dim: 8 };
        let mut a = RngStream::from_seed(11);
        let mut b = RngStream::from_seed(11);
        let ta = sample_latent(prior, 5, &mut a);
        let tb = sample_latent(prior, 5, &mut b);
        assert_eq!(ta.shape(), [5, 8]);
        assert_eq!(ta.data(), tb.data());

        let mut rng = RngStream::from_seed(12);
        let big = sample_latent(prior, 100_000, &mut rng);
        let dim = 8;
        let mut mean = vec![0.0; dim];
        for i in 0..big.rows() {
            for (m, v) in mean.iter_mut().zip(big.row_slice(i)) {
                *m += v;
            }
        }
        let norm: f64 = mean
            .iter()
            .map(|m| (m / big.rows() as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(norm < 3e-2 * (dim as f64).sqrt(), "mean norm {norm}");
    }

    #[test]
    fn supplementary_kinds_have_declared_ranges_and_moments() {
        let mut rng = RngStream::from_seed(13);
        let uni = sample_supplementary(
            SupplementaryDistribution { kind: SigmaKind::UniformM11, dim: 4 },
            10_000,
            &mut rng,
        );
        assert!(uni.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        let wide = sample_supplementary(
            SupplementaryDistribution { kind: SigmaKind::Normal02, dim: 1 },
            100_000,
            &mut rng,
        );
        let var = wide.data().iter().map(|v| v * v).sum::<f64>() / wide.numel() as f64;
        assert!((var - 2.0).abs() < 0.1, "variance {var}");

        let empty = sample_supplementary(
            SupplementaryDistribution { kind: SigmaKind::Normal01, dim: 7 },
            0,
            &mut rng,
        );
        assert_eq!(empty.shape(), [0, 7]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr, 1e-5);
        assert_eq!(cfg.beta1, 0.5);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.variant_name(), "rcalad");
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.batch_size = 1;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.d_steps_per_g_step = 0;
        assert!(bad.validate().is_err());

        let mut alad = cfg;
        alad.set_variant(Variant::Alad);
        assert_eq!(alad.variant_name(), "alad");
        alad.use_sigma = true;
        assert_eq!(alad.variant_name(), "ralad");
    }

    #[test]
    fn config_toml_roundtrip_with_partial_input() {
        let cfg: TrainConfig =
            toml::from_str("batch_size = 50\nmax_epochs = 3\nsigma_kind = \"uniform_m1_1\"").unwrap();
        assert_eq!(cfg.batch_size, 50);
        assert_eq!(cfg.max_epochs, 3);
        assert_eq!(cfg.sigma_kind, SigmaKind::UniformM11);
        assert_eq!(cfg.lr, 1e-5);

        let back = toml::to_string(&cfg).unwrap();
        let reparsed: TrainConfig = toml::from_str(&back).unwrap();
        assert_eq!(reparsed, cfg);

        let err = toml::from_str::<TrainConfig>("batch_sizes = 50").unwrap_err();
        assert!(err.to_string().contains("batch_sizes"), "{err}");
    }
}
