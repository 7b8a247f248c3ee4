//! Anomaly scores computed from a trained bundle.
//!
//! Scoring starts from the reconstruction triple: encode the input, decode
//! the code, encode the reconstruction. Six per-sample scores are derived
//! from it:
//!
//! | score        | definition                                              |
//! |--------------|---------------------------------------------------------|
//! | `a_l1`       | `‖x − x̂‖₁`                                              |
//! | `a_l2`       | `‖x − x̂‖₂`                                              |
//! | `a_logits`   | `log D_xx(x, x̂)`                                        |
//! | `a_features` | `‖f_xx(x, x) − f_xx(x, x̂)‖₁`                            |
//! | `a_fm`       | `‖f_xxzz(x, x, z_x, z_x) − f_xxzz(x, x̂, z_x, ẑ)‖₁`      |
//! | `a_all`      | `D_xxzz(x, x̂, z_x, ẑ) + D_xx(x, x̂) + D_zz(z_x, ẑ)`     |
//!
//! where `f` is a discriminator's next-to-last-layer activation and the
//! probability outputs are the final sigmoids. All forwards run in inference
//! mode (dropout off, batch norm on running statistics), so a sample's scores
//! do not depend on what else is in the batch.
//!
//! Raw scores do not share an orientation: the distance scores grow on
//! anomalies, while the discriminator outputs grow on normal-looking
//! reconstructions. [`orient`] maps everything onto one convention, larger
//! means more anomalous, before thresholding or ranking.

use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::net::{DiscKind, ModelBundle};
use crate::train::{Toggles, PROB_CLAMP};

/// The encode/decode/re-encode triple that every score reads from.
#[derive(Clone, Debug)]
pub struct ReconTriple {
    /// `E(x)`, one latent code per row.
    pub z_x: Tensor,
    /// `G(E(x))`, the reconstruction.
    pub x_hat: Tensor,
    /// `E(G(E(x)))`, the latent code of the reconstruction.
    pub z_hat: Tensor,
}

/// All six raw scores for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub a_l1: f64,
    pub a_l2: f64,
    pub a_logits: f64,
    pub a_features: f64,
    pub a_fm: f64,
    pub a_all: f64,
}

impl ScoreVector {
    /// Reads one component by kind.
    pub fn get(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::L1 => self.a_l1,
            ScoreKind::L2 => self.a_l2,
            ScoreKind::Logits => self.a_logits,
            ScoreKind::Features => self.a_features,
            ScoreKind::Fm => self.a_fm,
            ScoreKind::All => self.a_all,
        }
    }
}

/// Which of the six scores to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    L1,
    L2,
    Logits,
    Features,
    Fm,
    All,
}

/// Every kind, in column order.
pub const SCORE_KINDS: [ScoreKind; 6] = [
    ScoreKind::L1,
    ScoreKind::L2,
    ScoreKind::Logits,
    ScoreKind::Features,
    ScoreKind::Fm,
    ScoreKind::All,
];

impl ScoreKind {
    /// Short name as used on the command line and in config files.
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::L1 => "l1",
            ScoreKind::L2 => "l2",
            ScoreKind::Logits => "logits",
            ScoreKind::Features => "features",
            ScoreKind::Fm => "fm",
            ScoreKind::All => "all",
        }
    }

    /// Parses a short name.
    pub fn parse(s: &str) -> Result<ScoreKind> {
        SCORE_KINDS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown score `{s}`; expected one of l1, l2, logits, features, fm, all"
                ))
            })
    }

    /// Column name in the score dump and in [`ScoreVector`].
    pub fn column(self) -> &'static str {
        match self {
            ScoreKind::L1 => "a_l1",
            ScoreKind::L2 => "a_l2",
            ScoreKind::Logits => "a_logits",
            ScoreKind::Features => "a_features",
            ScoreKind::Fm => "a_fm",
            ScoreKind::All => "a_all",
        }
    }

    /// Whether the discriminators this score reads were part of training.
    pub fn available(self, toggles: &Toggles) -> bool {
        match self {
            ScoreKind::L1 | ScoreKind::L2 => true,
            ScoreKind::Logits | ScoreKind::Features => toggles.dxx,
            ScoreKind::Fm => toggles.dxxzz,
            ScoreKind::All => toggles.dxx && toggles.dzz && toggles.dxxzz,
        }
    }

    /// Errors if a discriminator this score reads was disabled in training.
    pub fn require(self, toggles: &Toggles) -> Result<()> {
        let needs = match self {
            ScoreKind::L1 | ScoreKind::L2 => return Ok(()),
            ScoreKind::Logits | ScoreKind::Features => {
                if toggles.dxx {
                    return Ok(());
                }
                "d_xx"
            }
            ScoreKind::Fm => {
                if toggles.dxxzz {
                    return Ok(());
                }
                "d_xxzz"
            }
            ScoreKind::All => {
                if !toggles.dxx {
                    "d_xx"
                } else if !toggles.dzz {
                    "d_zz"
                } else if !toggles.dxxzz {
                    "d_xxzz"
                } else {
                    return Ok(());
                }
            }
        };
        Err(Error::ScoreUnavailable { score: self.name(), needs })
    }

    /// The requested score when available, otherwise the closest score the
    /// variant supports: the `d_xx` feature distance when that discriminator
    /// was trained, plain `l1` reconstruction error when not.
    pub fn fallback(self, toggles: &Toggles) -> ScoreKind {
        if self.available(toggles) {
            self
        } else if toggles.dxx {
            ScoreKind::Features
        } else {
            ScoreKind::L1
        }
    }
}

/// Per-score sign applied when orienting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    AsIs,
    Negate,
}

impl Sign {
    fn apply(self, v: f64) -> f64 {
        match self {
            Sign::AsIs => v,
            Sign::Negate => -v,
        }
    }
}

/// Which scores to negate so that larger always means more anomalous.
///
/// The default leaves the four distance scores alone and negates the two
/// discriminator-output scores, because discriminators score well-matched
/// (normal-looking) pairs high. Set everything to [`Sign::AsIs`] to rank by
/// the raw values instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrientationConvention {
    pub a_l1: Sign,
    pub a_l2: Sign,
    pub a_logits: Sign,
    pub a_features: Sign,
    pub a_fm: Sign,
    pub a_all: Sign,
}

impl Default for OrientationConvention {
    fn default() -> OrientationConvention {
        OrientationConvention {
            a_l1: Sign::AsIs,
            a_l2: Sign::AsIs,
            a_logits: Sign::Negate,
            a_features: Sign::AsIs,
            a_fm: Sign::AsIs,
            a_all: Sign::Negate,
        }
    }
}

impl OrientationConvention {
    /// A convention that changes nothing.
    pub fn as_is() -> OrientationConvention {
        OrientationConvention {
            a_l1: Sign::AsIs,
            a_l2: Sign::AsIs,
            a_logits: Sign::AsIs,
            a_features: Sign::AsIs,
            a_fm: Sign::AsIs,
            a_all: Sign::AsIs,
        }
    }

    /// The sign for one score.
    pub fn sign(&self, kind: ScoreKind) -> Sign {
        match kind {
            ScoreKind::L1 => self.a_l1,
            ScoreKind::L2 => self.a_l2,
            ScoreKind::Logits => self.a_logits,
            ScoreKind::Features => self.a_features,
            ScoreKind::Fm => self.a_fm,
            ScoreKind::All => self.a_all,
        }
    }
}

/// Applies the convention to one sample's scores.
pub fn orient(s: &ScoreVector, conv: &OrientationConvention) -> ScoreVector {
    ScoreVector {
        a_l1: conv.a_l1.apply(s.a_l1),
        a_l2: conv.a_l2.apply(s.a_l2),
        a_logits: conv.a_logits.apply(s.a_logits),
        a_features: conv.a_features.apply(s.a_features),
        a_fm: conv.a_fm.apply(s.a_fm),
        a_all: conv.a_all.apply(s.a_all),
    }
}

/// Applies the convention to one score column.
pub fn orient_column(kind: ScoreKind, values: &[f64], conv: &OrientationConvention) -> Vec<f64> {
    let sign = conv.sign(kind);
    values.iter().map(|&v| sign.apply(v)).collect()
}

/// Runs the encode/decode/re-encode cycle in inference mode.
pub fn reconstruct(bundle: &ModelBundle, x: &Tensor) -> Result<ReconTriple> {
    let z_x = bundle.encode(x)?;
    let x_hat = bundle.generate(&z_x)?;
    let z_hat = bundle.encode(&x_hat)?;
    Ok(ReconTriple { z_x, x_hat, z_hat })
}

fn row_l1_distance(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let [n, d] = a.shape();
    let (ad, bd) = (a.data(), b.data());
    (0..n)
        .map(|i| (0..d).map(|j| (ad[i * d + j] - bd[i * d + j]).abs()).sum())
        .collect()
}

fn row_l2_distance(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let [n, d] = a.shape();
    let (ad, bd) = (a.data(), b.data());
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let e = ad[i * d + j] - bd[i * d + j];
                    e * e
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_triple(bundle: &ModelBundle, x: &Tensor, triple: &ReconTriple) -> Result<()> {
    let [n, d] = x.shape();
    for (t, want) in [
        (&triple.z_x, [n, bundle.latent_dim]),
        (&triple.x_hat, [n, bundle.input_dim]),
        (&triple.z_hat, [n, bundle.latent_dim]),
    ] {
        if t.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "score triple",
                left: t.shape().to_vec(),
                right: want.to_vec(),
            });
        }
    }
    if d != bundle.input_dim {
        return Err(Error::ShapeMismatch {
            op: "score input",
            left: vec![n, d],
            right: vec![n, bundle.input_dim],
        });
    }
    Ok(())
}

/// The four scores that need at most the `d_xx` discriminator: the two
/// reconstruction norms, the `d_xx` log-probability, and the `d_xx` feature
/// distance. Returned in that order, one value per row.
pub fn score_baselines(
    bundle: &ModelBundle,
    x: &Tensor,
    triple: &ReconTriple,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_triple(bundle, x, triple)?;
    let a_l1 = row_l1_distance(x, &triple.x_hat);
    let a_l2 = row_l2_distance(x, &triple.x_hat);
    let real = bundle.discriminate(DiscKind::Xx, &[x, x])?;
    let recon = bundle.discriminate(DiscKind::Xx, &[x, &triple.x_hat])?;
    let a_logits = recon.prob.data().iter().map(|&p| clamp_prob(p).ln()).collect();
    let a_features = row_l1_distance(&real.features, &recon.features);
    Ok((a_l1, a_l2, a_logits, a_features))
}

/// Feature-matching distance in the joint discriminator: compares the
/// `d_xxzz` features of the identity quadruple against the reconstruction
/// quadruple.
pub fn score_fm(
    bundle: &ModelBundle,
    toggles: &Toggles,
    x: &Tensor,
    triple: &ReconTriple,
) -> Result<Vec<f64>> {
    ScoreKind::Fm.require(toggles)?;
    check_triple(bundle, x, triple)?;
    let real = bundle.discriminate(DiscKind::Xxzz, &[x, x, &triple.z_x, &triple.z_x])?;
    let recon =
        bundle.discriminate(DiscKind::Xxzz, &[x, &triple.x_hat, &triple.z_x, &triple.z_hat])?;
    Ok(row_l1_distance(&real.features, &recon.features))
}

/// Sum of the three cycle discriminators' probabilities on the
/// reconstruction pairings. Raw values lie strictly inside `(0, 3)`.
pub fn score_all(
    bundle: &ModelBundle,
    toggles: &Toggles,
    x: &Tensor,
    triple: &ReconTriple,
) -> Result<Vec<f64>> {
    ScoreKind::All.require(toggles)?;
    check_triple(bundle, x, triple)?;
    let quad =
        bundle.discriminate(DiscKind::Xxzz, &[x, &triple.x_hat, &triple.z_x, &triple.z_hat])?;
    let pair_x = bundle.discriminate(DiscKind::Xx, &[x, &triple.x_hat])?;
    let pair_z = bundle.discriminate(DiscKind::Zz, &[&triple.z_x, &triple.z_hat])?;
    Ok(quad
        .prob
        .data()
        .iter()
        .zip(pair_x.prob.data())
        .zip(pair_z.prob.data())
        .map(|((&a, &b), &c)| clamp_prob(a) + clamp_prob(b) + clamp_prob(c))
        .collect())
}

/// One raw score column for a batch, checking that the variant trained the
/// discriminators the score reads.
pub fn score_one(
    bundle: &ModelBundle,
    toggles: &Toggles,
    kind: ScoreKind,
    x: &Tensor,
) -> Result<Vec<f64>> {
    kind.require(toggles)?;
    let triple = reconstruct(bundle, x)?;
    match kind {
        ScoreKind::L1 => Ok(row_l1_distance(x, &triple.x_hat)),
        ScoreKind::L2 => Ok(row_l2_distance(x, &triple.x_hat)),
        ScoreKind::Logits => {
            let recon = bundle.discriminate(DiscKind::Xx, &[x, &triple.x_hat])?;
            Ok(recon.prob.data().iter().map(|&p| clamp_prob(p).ln()).collect())
        }
        ScoreKind::Features => {
            let real = bundle.discriminate(DiscKind::Xx, &[x, x])?;
            let recon = bundle.discriminate(DiscKind::Xx, &[x, &triple.x_hat])?;
            Ok(row_l1_distance(&real.features, &recon.features))
        }
        ScoreKind::Fm => score_fm(bundle, toggles, x, &triple),
        ScoreKind::All => score_all(bundle, toggles, x, &triple),
    }
}

/// All six raw scores for a batch, one [`ScoreVector`] per row. Needs the
/// three cycle discriminators (`d_xx`, `d_zz`, `d_xxzz`) trained.
pub fn score_table(bundle: &ModelBundle, toggles: &Toggles, x: &Tensor) -> Result<Vec<ScoreVector>> {
    for kind in [ScoreKind::Features, ScoreKind::Fm, ScoreKind::All] {
        kind.require(toggles)?;
    }
    let triple = reconstruct(bundle, x)?;
    let (a_l1, a_l2, a_logits, a_features) = score_baselines(bundle, x, &triple)?;
    let a_fm = score_fm(bundle, toggles, x, &triple)?;
    let a_all = score_all(bundle, toggles, x, &triple)?;
    Ok((0..x.shape()[0])
        .map(|i| ScoreVector {
            a_l1: a_l1[i],
            a_l2: a_l2[i],
            a_logits: a_logits[i],
            a_features: a_features[i],
            a_fm: a_fm[i],
            a_all: a_all[i],
        })
        .collect())
}

/// Raw score columns for every kind the variant supports, in [`SCORE_KINDS`]
/// order. Kinds whose discriminators were not trained come back as `None`.
/// The reconstruction cycle runs once and is shared by all columns.
pub fn score_columns(
    bundle: &ModelBundle,
    toggles: &Toggles,
    x: &Tensor,
) -> Result<Vec<(ScoreKind, Option<Vec<f64>>)>> {
    let triple = reconstruct(bundle, x)?;
    let mut out = Vec::with_capacity(SCORE_KINDS.len());
    if ScoreKind::Features.available(toggles) {
        let (a_l1, a_l2, a_logits, a_features) = score_baselines(bundle, x, &triple)?;
        out.push((ScoreKind::L1, Some(a_l1)));
        out.push((ScoreKind::L2, Some(a_l2)));
        out.push((ScoreKind::Logits, Some(a_logits)));
        out.push((ScoreKind::Features, Some(a_features)));
    } else {
        out.push((ScoreKind::L1, Some(row_l1_distance(x, &triple.x_hat))));
        out.push((ScoreKind::L2, Some(row_l2_distance(x, &triple.x_hat))));
        out.push((ScoreKind::Logits, None));
        out.push((ScoreKind::Features, None));
    }
    let fm = if ScoreKind::Fm.available(toggles) {
        Some(score_fm(bundle, toggles, x, &triple)?)
    } else {
        None
    };
    out.push((ScoreKind::Fm, fm));
    let all = if ScoreKind::All.available(toggles) {
        Some(score_all(bundle, toggles, x, &triple)?)
    } else {
        None
    };
    out.push((ScoreKind::All, all));
    Ok(out)
}

/// Writes a score dump with the same header as [`write_scores_csv`], but
/// tolerating missing columns: a `None` column leaves its cells empty.
/// `n` is the row count; every present column must have `n` values.
pub fn write_score_columns_csv<W: std::io::Write>(
    w: &mut W,
    n: usize,
    columns: &[(ScoreKind, Option<Vec<f64>>)],
    labels: Option<&[u8]>,
) -> std::io::Result<()> {
    if let Some(l) = labels {
        assert_eq!(l.len(), n, "one label per scored sample");
    }
    for (kind, col) in columns {
        if let Some(c) = col {
            assert_eq!(c.len(), n, "column {} must have one value per row", kind.name());
        }
    }
    writeln!(w, "sample_id,a_l1,a_l2,a_logits,a_features,a_fm,a_all,label")?;
    for i in 0..n {
        write!(w, "{i}")?;
        for kind in SCORE_KINDS {
            let cell = columns
                .iter()
                .find(|(k, _)| *k == kind)
                .and_then(|(_, col)| col.as_ref())
                .map(|col| fmt_f64(col[i]))
                .unwrap_or_default();
            write!(w, ",{cell}")?;
        }
        let label = labels.map(|l| l[i].to_string()).unwrap_or_default();
        writeln!(w, ",{label}")?;
    }
    Ok(())
}

/// Writes the score dump: a header, then one row per sample in input order.
/// Labels (1 = anomaly) are optional; without them the column stays empty.
pub fn write_scores_csv<W: std::io::Write>(
    w: &mut W,
    scores: &[ScoreVector],
    labels: Option<&[u8]>,
) -> std::io::Result<()> {
    if let Some(l) = labels {
        assert_eq!(l.len(), scores.len(), "one label per scored sample");
    }
    writeln!(w, "sample_id,a_l1,a_l2,a_logits,a_features,a_fm,a_all,label")?;
    for (i, s) in scores.iter().enumerate() {
        let label = labels.map(|l| l[i].to_string()).unwrap_or_default();
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{label}",
            fmt_f64(s.a_l1),
            fmt_f64(s.a_l2),
            fmt_f64(s.a_logits),
            fmt_f64(s.a_features),
            fmt_f64(s.a_fm),
            fmt_f64(s.a_all),
        )?;
    }
    Ok(())
}

/// Shortest decimal form that round-trips the exact value.
pub(crate) fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::rng::RngStream;
    use crate::autodiff::spectral::spectral_normalize_eval;
    use crate::autodiff::tape::Activation;
    use crate::net::{chain, default_arch, ArchPreset, ArchSet, LayerSpec, Network, BN_EPS};

    fn toy_bundle(seed: u64) -> ModelBundle {
        let arch = default_arch(ArchPreset::Toy, 3, 2).unwrap();
        let mut rng = RngStream::from_seed(seed);
        ModelBundle::build(&arch, &mut rng).unwrap()
    }

    fn random_batch(bundle: &ModelBundle, n: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::from_seed(seed);
        let mut x = Tensor::zeros(n, bundle.input_dim);
        rng.fill_normal(x.data_mut(), 0.0, 1.0);
        x
    }

    /// Encoder and generator replaced by the identity map (square weights,
    /// no bias, linear activation), so reconstructions are exact.
    fn identity_bundle() -> ModelBundle {
        let d = 3;
        let arch = default_arch(ArchPreset::Toy, d, d).unwrap();
        let mut rng = RngStream::from_seed(11);
        let id_spec = |name: &str| {
            chain(
                name,
                d,
                vec![LayerSpec {
                    width: d,
                    activation: Activation::None,
                    batch_norm: false,
                    dropout: 0.0,
                    spectral_norm: false,
                }],
            )
        };
        let mut bundle = ModelBundle {
            enc: Network::build(id_spec("enc"), &mut rng).unwrap(),
            gen: Network::build(id_spec("gen"), &mut rng).unwrap(),
            ..ModelBundle::build(&arch, &mut rng).unwrap()
        };
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        bundle.set_param("enc.joint.l0.w", &eye).unwrap();
        bundle.set_param("gen.joint.l0.w", &eye).unwrap();
        bundle
    }

    /// Forces a discriminator's output unit to logit zero, probability 0.5.
    fn stub_discriminator(bundle: &mut ModelBundle, name: &str) {
        let prefix = format!("{name}.joint");
        let mut targets = Vec::new();
        bundle.visit_params(&mut |n, t| {
            if n.starts_with(&prefix) && t.shape()[1] == 1 {
                targets.push((n.to_string(), t.numel()));
            }
        });
        assert!(!targets.is_empty(), "no output-layer parameters under {prefix}");
        for (n, len) in targets {
            bundle.set_param(&n, &vec![0.0; len]).unwrap();
        }
    }

    #[test]
    fn identity_cycle_zeroes_the_distance_scores() {
        let bundle = identity_bundle();
        let x = random_batch(&bundle, 6, 0);
        let triple = reconstruct(&bundle, &x).unwrap();
        assert_eq!(triple.x_hat.data(), x.data());
        assert_eq!(triple.z_hat.data(), triple.z_x.data());
        let toggles = Toggles::all();
        let (a_l1, a_l2, _, a_features) = score_baselines(&bundle, &x, &triple).unwrap();
        let a_fm = score_fm(&bundle, &toggles, &x, &triple).unwrap();
        assert!(a_l1.iter().all(|&v| v == 0.0));
        assert!(a_l2.iter().all(|&v| v == 0.0));
        assert!(a_features.iter().all(|&v| v == 0.0));
        assert!(a_fm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_shapes_and_determinism() {
        let bundle = toy_bundle(5);
        let x = random_batch(&bundle, 4, 1);
        let a = reconstruct(&bundle, &x).unwrap();
        let b = reconstruct(&bundle, &x).unwrap();
        assert_eq!(a.z_x.shape(), [4, 2]);
        assert_eq!(a.x_hat.shape(), [4, 3]);
        assert_eq!(a.z_hat.shape(), [4, 2]);
        assert_eq!(a.z_x.data(), b.z_x.data());
        assert_eq!(a.x_hat.data(), b.x_hat.data());
        assert_eq!(a.z_hat.data(), b.z_hat.data());
    }

    #[test]
    fn hand_arithmetic_for_the_reconstruction_norms() {
        let x = Tensor::new([1, 2], vec![1.0, 2.0]).unwrap();
        let x_hat = Tensor::new([1, 2], vec![2.0, 4.0]).unwrap();
        assert_eq!(row_l1_distance(&x, &x_hat), vec![3.0]);
        assert!((row_l2_distance(&x, &x_hat)[0] - 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stubbed_discriminators_give_the_textbook_values() {
        let mut bundle = identity_bundle();
        for name in ["d_xx", "d_zz", "d_xxzz"] {
            stub_discriminator(&mut bundle, name);
        }
        let x = random_batch(&bundle, 5, 2);
        let triple = reconstruct(&bundle, &x).unwrap();
        let toggles = Toggles::all();
        let (_, _, a_logits, _) = score_baselines(&bundle, &x, &triple).unwrap();
        let a_all = score_all(&bundle, &toggles, &x, &triple).unwrap();
        for v in a_logits {
            assert!((v - 0.5f64.ln()).abs() < 1e-12, "logit score {v}");
        }
        for v in a_all {
            assert!((v - 1.5).abs() < 1e-12, "sum score {v}");
        }
    }

    #[test]
    fn raw_sum_score_stays_inside_its_bounds() {
        let bundle = toy_bundle(9);
        let toggles = Toggles::all();
        for seed in 0..5 {
            let x = random_batch(&bundle, 8, seed);
            let triple = reconstruct(&bundle, &x).unwrap();
            let a_all = score_all(&bundle, &toggles, &x, &triple).unwrap();
            for v in a_all {
                assert!(v > 0.0 && v < 3.0, "raw sum score {v} out of (0,3)");
            }
        }
    }

    #[test]
    fn disabled_discriminators_make_scores_unavailable() {
        let bundle = toy_bundle(3);
        let x = random_batch(&bundle, 3, 0);
        let triple = reconstruct(&bundle, &x).unwrap();
        let alad = Toggles { dxx: true, dzz: true, dxxzz: false, sigma: false };
        let err = score_fm(&bundle, &alad, &x, &triple).unwrap_err();
        assert!(matches!(
            err,
            Error::ScoreUnavailable { score: "fm", needs: "d_xxzz" }
        ));
        let err = score_all(&bundle, &alad, &x, &triple).unwrap_err();
        assert!(matches!(
            err,
            Error::ScoreUnavailable { score: "all", needs: "d_xxzz" }
        ));
        let ali = Toggles::none();
        let err = score_one(&bundle, &ali, ScoreKind::Features, &x).unwrap_err();
        assert!(matches!(
            err,
            Error::ScoreUnavailable { score: "features", needs: "d_xx" }
        ));
        assert!(score_one(&bundle, &ali, ScoreKind::L1, &x).is_ok());
    }

    #[test]
    fn fallback_prefers_the_feature_distance() {
        let alad = Toggles { dxx: true, dzz: true, dxxzz: false, sigma: false };
        assert_eq!(ScoreKind::All.fallback(&alad), ScoreKind::Features);
        assert_eq!(ScoreKind::L2.fallback(&alad), ScoreKind::L2);
        let ali = Toggles::none();
        assert_eq!(ScoreKind::All.fallback(&ali), ScoreKind::L1);
        assert_eq!(ScoreKind::Features.fallback(&ali), ScoreKind::L1);
    }

    #[test]
    fn orientation_negates_only_the_discriminator_scores() {
        let raw = ScoreVector {
            a_l1: 1.0,
            a_l2: 2.0,
            a_logits: -0.7,
            a_features: 3.0,
            a_fm: 4.0,
            a_all: 1.5,
        };
        let conv = OrientationConvention::default();
        let o = orient(&raw, &conv);
        assert_eq!(o.a_l1, 1.0);
        assert_eq!(o.a_l2, 2.0);
        assert_eq!(o.a_features, 3.0);
        assert_eq!(o.a_fm, 4.0);
        assert_eq!(o.a_logits, 0.7);
        assert_eq!(o.a_all, -1.5);
        let twice = orient(&orient(&raw, &OrientationConvention::as_is()), &OrientationConvention::as_is());
        assert_eq!(twice, raw);
        assert_eq!(orient_column(ScoreKind::All, &[1.5, 0.2], &conv), vec![-1.5, -0.2]);
    }

    #[test]
    fn batch_scores_equal_per_sample_scores() {
        let bundle = toy_bundle(17);
        let toggles = Toggles::all();
        let x = random_batch(&bundle, 7, 4);
        let batch = score_table(&bundle, &toggles, &x).unwrap();
        for i in 0..7 {
            let row = x.gather_rows(&[i]);
            let single = score_table(&bundle, &toggles, &row).unwrap();
            assert_eq!(single.len(), 1);
            let (a, b) = (batch[i], single[0]);
            for kind in SCORE_KINDS {
                let (va, vb) = (a.get(kind), b.get(kind));
                assert!(
                    (va - vb).abs() <= 1e-12 * va.abs().max(vb.abs()).max(1.0),
                    "row {i} {}: batch {va} vs single {vb}",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn csv_dump_has_the_documented_header_and_rows() {
        let scores = vec![
            ScoreVector {
                a_l1: 1.0,
                a_l2: 0.5,
                a_logits: -0.25,
                a_features: 2.0,
                a_fm: 3.0,
                a_all: 1.5,
            };
            2
        ];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores, Some(&[0, 1])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sample_id,a_l1,a_l2,a_logits,a_features,a_fm,a_all,label"
        );
        assert_eq!(lines.next().unwrap(), "0,1.0,0.5,-0.25,2.0,3.0,1.5,0");
        assert_eq!(lines.next().unwrap(), "1,1.0,0.5,-0.25,2.0,3.0,1.5,1");
        assert!(lines.next().is_none());

        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores[..1], None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn column_scores_match_the_full_table_and_respect_toggles() {
        let bundle = toy_bundle(21);
        let x = random_batch(&bundle, 5, 6);
        let all = Toggles::all();
        let table = score_table(&bundle, &all, &x).unwrap();
        let cols = score_columns(&bundle, &all, &x).unwrap();
        assert_eq!(cols.len(), SCORE_KINDS.len());
        for (kind, col) in &cols {
            let col = col.as_ref().expect("all toggles make every column available");
            for (i, row) in table.iter().enumerate() {
                assert_eq!(col[i], row.get(*kind), "column {} row {i}", kind.name());
            }
        }

        let ali = Toggles::none();
        let cols = score_columns(&bundle, &ali, &x).unwrap();
        for (kind, col) in &cols {
            match kind {
                ScoreKind::L1 | ScoreKind::L2 => assert!(col.is_some()),
                _ => assert!(col.is_none(), "{} should be missing without d_xx", kind.name()),
            }
        }
    }

    #[test]
    fn column_csv_leaves_missing_columns_empty() {
        let cols = vec![
            (ScoreKind::L1, Some(vec![1.0, 2.0])),
            (ScoreKind::L2, Some(vec![0.5, 0.25])),
            (ScoreKind::Logits, None),
            (ScoreKind::Features, None),
            (ScoreKind::Fm, None),
            (ScoreKind::All, None),
        ];
        let mut buf = Vec::new();
        write_score_columns_csv(&mut buf, 2, &cols, Some(&[0, 1])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sample_id,a_l1,a_l2,a_logits,a_features,a_fm,a_all,label"
        );
        assert_eq!(lines.next().unwrap(), "0,1.0,0.5,,,,,0");
        assert_eq!(lines.next().unwrap(), "1,2.0,0.25,,,,,1");
        assert!(lines.next().is_none());
    }

    /// Walks one network sample-by-sample with plain scalar loops, mirroring
    /// the inference-mode rules: spectral weights from the stored vector,
    /// batch norm on running statistics, dropout off. Returns the next-to-last
    /// joint activation and the final sigmoid probability.
    fn scalar_disc(net: &Network, inputs: &[&[f64]]) -> (Vec<f64>, f64) {
        fn layer_forward(layer: &crate::net::Layer, x: &[f64], linear_only: bool) -> Vec<f64> {
            let w_eff = match &layer.sn {
                Some(state) => spectral_normalize_eval(&layer.w, &state.u, 1).unwrap().0,
                None => layer.w.clone(),
            };
            let [fan_in, width] = w_eff.shape();
            assert_eq!(x.len(), fan_in);
            let mut out = vec![0.0; width];
            for j in 0..width {
                let mut acc = 0.0;
                for (i, &xi) in x.iter().enumerate() {
                    acc += xi * w_eff.data()[i * width + j];
                }
                out[j] = acc + layer.b.data()[j];
            }
            if linear_only {
                return out;
            }
            if let Some(bn) = &layer.bn {
                for j in 0..width {
                    let norm = (out[j] - bn.running_mean[j]) / (bn.running_var[j] + BN_EPS).sqrt();
                    out[j] = bn.gamma.data()[j] * norm + bn.beta.data()[j];
                }
            }
            for v in out.iter_mut() {
                *v = match layer.spec.activation {
                    Activation::None => *v,
                    Activation::Relu => v.max(0.0),
                    Activation::LRelu(s) => {
                        if *v > 0.0 {
                            *v
                        } else {
                            s * *v
                        }
                    }
                    Activation::Tanh => v.tanh(),
                    Activation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                };
            }
            out
        }

        let mut branch_outs = Vec::new();
        for (layers, bs) in net.branches.iter().zip(&net.spec.branches) {
            let mut h: Vec<f64> = bs.inputs.iter().flat_map(|&s| inputs[s].iter().copied()).collect();
            for layer in layers {
                h = layer_forward(layer, &h, false);
            }
            branch_outs.push(h);
        }
        let mut h: Vec<f64> = branch_outs.concat();
        let joint = &net.joint;
        for layer in &joint[..joint.len() - 1] {
            h = layer_forward(layer, &h, false);
        }
        let features = h.clone();
        let logit = layer_forward(joint.last().unwrap(), &h, true)[0];
        (features, 1.0 / (1.0 + (-logit).exp()))
    }

    #[test]
    fn feature_and_sum_scores_match_a_scalar_transcription() {
        let arch: ArchSet = default_arch(ArchPreset::Tabular, 12, 4).unwrap();
        let mut rng = RngStream::from_seed(23);
        let bundle = ModelBundle::build(&arch, &mut rng).unwrap();
        let toggles = Toggles::all();
        let x = random_batch(&bundle, 6, 8);
        let triple = reconstruct(&bundle, &x).unwrap();
        let a_fm = score_fm(&bundle, &toggles, &x, &triple).unwrap();
        let a_all = score_all(&bundle, &toggles, &x, &triple).unwrap();

        let d = bundle.input_dim;
        let l = bundle.latent_dim;
        for i in 0..x.shape()[0] {
            let xi = &x.data()[i * d..(i + 1) * d];
            let xh = &triple.x_hat.data()[i * d..(i + 1) * d];
            let zx = &triple.z_x.data()[i * l..(i + 1) * l];
            let zh = &triple.z_hat.data()[i * l..(i + 1) * l];

            let (f_real, _) = scalar_disc(&bundle.d_xxzz, &[xi, xi, zx, zx]);
            let (f_recon, p_quad) = scalar_disc(&bundle.d_xxzz, &[xi, xh, zx, zh]);
            let want_fm: f64 = f_real.iter().zip(&f_recon).map(|(a, b)| (a - b).abs()).sum();
            assert!(
                (a_fm[i] - want_fm).abs() <= 1e-9 * want_fm.max(1.0),
                "row {i}: fm {} vs scalar {want_fm}",
                a_fm[i]
            );

            let (_, p_xx) = scalar_disc(&bundle.d_xx, &[xi, xh]);
            let (_, p_zz) = scalar_disc(&bundle.d_zz, &[zx, zh]);
            let want_all = clamp_prob(p_quad) + clamp_prob(p_xx) + clamp_prob(p_zz);
            assert!(
                (a_all[i] - want_all).abs() <= 1e-9,
                "row {i}: sum {} vs scalar {want_all}",
                a_all[i]
            );
        }
    }

    #[test]
    fn score_kind_names_round_trip() {
        for kind in SCORE_KINDS {
            assert_eq!(ScoreKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(ScoreKind::parse("nope").is_err());
        assert_eq!(ScoreKind::All.column(), "a_all");
    }

    #[test]
    fn score_table_matches_the_individual_ops() {
        let bundle = toy_bundle(29);
        let toggles = Toggles::all();
        let x = random_batch(&bundle, 5, 3);
        let table = score_table(&bundle, &toggles, &x).unwrap();
        let triple = reconstruct(&bundle, &x).unwrap();
        let (a_l1, _, a_logits, _) = score_baselines(&bundle, &x, &triple).unwrap();
        let a_fm = score_fm(&bundle, &toggles, &x, &triple).unwrap();
        for i in 0..5 {
            assert_eq!(table[i].a_l1, a_l1[i]);
            assert_eq!(table[i].a_logits, a_logits[i]);
            assert_eq!(table[i].a_fm, a_fm[i]);
        }
        let one = score_one(&bundle, &toggles, ScoreKind::Fm, &x).unwrap();
        assert_eq!(one, a_fm);
    }
}
