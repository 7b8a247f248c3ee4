//! Stock architectures for the supported dataset families.
//!
//! Camera-ready widths for the tabular family and the network-intrusion
//! family, plus a deliberately small preset for two-dimensional toy
//! problems. Spectral normalization is applied to every discriminator
//! layer and never to the encoder or generator; batch norm appears only on
//! the first layer of the discriminator branches that read raw inputs.

use crate::autodiff::tape::Activation::{LRelu, None as Linear, Relu, Sigmoid};
use crate::error::{Error, Result};
use crate::net::spec::{chain, BranchSpec, LayerSpec, NetworkSpec};

/// Negative-side slope shared by every leaky rectifier in the presets.
pub const LRELU_SLOPE: f64 = 0.2;

/// Architecture family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchPreset {
    /// Small clinical/chemical tables (a few hundred rows, ~100-300 columns).
    Tabular,
    /// Wide one-hot network-traffic tables (tens of thousands of rows).
    Kdd,
    /// Two-dimensional synthetic problems.
    Toy,
}

impl ArchPreset {
    pub fn parse(s: &str) -> Result<ArchPreset> {
        match s {
            "tabular" => Ok(ArchPreset::Tabular),
            "kdd" => Ok(ArchPreset::Kdd),
            "toy" => Ok(ArchPreset::Toy),
            other => Err(Error::Config(format!(
                "unknown arch preset `{other}` (expected tabular, kdd, or toy)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchPreset::Tabular => "tabular",
            ArchPreset::Kdd => "kdd",
            ArchPreset::Toy => "toy",
        }
    }

    /// Latent width the preset was designed around.
    pub fn default_latent_dim(&self) -> usize {
        match self {
            ArchPreset::Tabular => 64,
            // The published table pins the bottleneck at 1 for this family.
            ArchPreset::Kdd => 1,
            ArchPreset::Toy => 2,
        }
    }
}

/// The six network specs of one model.
#[derive(Clone, Debug)]
pub struct ArchSet {
    pub encoder: NetworkSpec,
    pub generator: NetworkSpec,
    pub d_xz: NetworkSpec,
    pub d_xx: NetworkSpec,
    pub d_zz: NetworkSpec,
    pub d_xxzz: NetworkSpec,
    pub input_dim: usize,
    pub latent_dim: usize,
}

fn lrelu(width: usize) -> LayerSpec {
    LayerSpec::dense(width, LRelu(LRELU_SLOPE))
}

fn sn(mut layers: Vec<LayerSpec>) -> Vec<LayerSpec> {
    for l in &mut layers {
        l.spectral_norm = true;
    }
    layers
}

fn sn_branch(inputs: Vec<usize>, layers: Vec<LayerSpec>) -> BranchSpec {
    BranchSpec { inputs, layers: sn(layers) }
}

fn pass(inputs: Vec<usize>) -> BranchSpec {
    BranchSpec { inputs, layers: Vec::new() }
}

/// Builds the full spec set for a preset at the given data/latent widths.
pub fn default_arch(preset: ArchPreset, input_dim: usize, latent_dim: usize) -> Result<ArchSet> {
    if input_dim == 0 || latent_dim == 0 {
        return Err(Error::Invalid(format!(
            "default_arch needs positive dims, got input {input_dim}, latent {latent_dim}"
        )));
    }
    let set = match preset {
        ArchPreset::Tabular => ArchSet {
            encoder: chain(
                "enc",
                input_dim,
                vec![lrelu(256), lrelu(128), LayerSpec::dense(latent_dim, Linear)],
            ),
            generator: chain(
                "gen",
                latent_dim,
                vec![
                    LayerSpec::dense(128, Relu),
                    LayerSpec::dense(256, Relu),
                    LayerSpec::dense(input_dim, Linear),
                ],
            ),
            d_xz: NetworkSpec {
                name: "d_xz".into(),
                input_dims: vec![input_dim, latent_dim],
                branches: vec![
                    sn_branch(vec![0], vec![lrelu(128).batch_norm()]),
                    sn_branch(vec![1], vec![lrelu(128).dropout(0.5)]),
                ],
                joint: sn(vec![lrelu(256).dropout(0.5), LayerSpec::dense(1, Sigmoid)]),
            },
            d_xx: NetworkSpec {
                name: "d_xx".into(),
                input_dims: vec![input_dim, input_dim],
                branches: vec![pass(vec![0, 1])],
                joint: sn(vec![
                    lrelu(256).dropout(0.2),
                    lrelu(128).dropout(0.2),
                    LayerSpec::dense(1, Sigmoid),
                ]),
            },
            d_zz: NetworkSpec {
                name: "d_zz".into(),
                input_dims: vec![latent_dim, latent_dim],
                branches: vec![pass(vec![0, 1])],
                joint: sn(vec![
                    lrelu(64).dropout(0.2),
                    lrelu(32).dropout(0.2),
                    LayerSpec::dense(1, Sigmoid),
                ]),
            },
            d_xxzz: NetworkSpec {
                name: "d_xxzz".into(),
                input_dims: vec![input_dim, input_dim, latent_dim, latent_dim],
                branches: vec![
                    sn_branch(vec![0, 1], vec![lrelu(256).batch_norm(), lrelu(128).dropout(0.2)]),
                    sn_branch(vec![2, 3], vec![lrelu(64).dropout(0.2)]),
                ],
                joint: sn(vec![
                    lrelu(128).dropout(0.5),
                    lrelu(32),
                    LayerSpec::dense(1, Sigmoid),
                ]),
            },
            input_dim,
            latent_dim,
        },
        ArchPreset::Kdd => ArchSet {
            encoder: chain("enc", input_dim, vec![lrelu(64), LayerSpec::dense(latent_dim, Linear)]),
            generator: chain(
                "gen",
                latent_dim,
                vec![
                    LayerSpec::dense(64, Relu),
                    LayerSpec::dense(128, Relu),
                    LayerSpec::dense(input_dim, Linear),
                ],
            ),
            d_xz: NetworkSpec {
                name: "d_xz".into(),
                input_dims: vec![input_dim, latent_dim],
                branches: vec![
                    sn_branch(vec![0], vec![lrelu(128).batch_norm()]),
                    sn_branch(vec![1], vec![lrelu(128).dropout(0.5)]),
                ],
                joint: sn(vec![lrelu(128).dropout(0.5), LayerSpec::dense(1, Sigmoid)]),
            },
            d_xx: NetworkSpec {
                name: "d_xx".into(),
                input_dims: vec![input_dim, input_dim],
                branches: vec![pass(vec![0, 1])],
                joint: sn(vec![lrelu(128).dropout(0.2), LayerSpec::dense(1, Sigmoid)]),
            },
            d_zz: NetworkSpec {
                name: "d_zz".into(),
                input_dims: vec![latent_dim, latent_dim],
                branches: vec![pass(vec![0, 1])],
                joint: sn(vec![lrelu(32).dropout(0.2), LayerSpec::dense(1, Sigmoid)]),
            },
            d_xxzz: NetworkSpec {
                name: "d_xxzz".into(),
                input_dims: vec![input_dim, input_dim, latent_dim, latent_dim],
                branches: vec![
                    sn_branch(vec![0, 1], vec![lrelu(128).batch_norm()]),
                    sn_branch(vec![2, 3], vec![lrelu(32).dropout(0.5)]),
                ],
                joint: sn(vec![
                    lrelu(64).dropout(0.5),
                    lrelu(16),
                    LayerSpec::dense(1, Sigmoid),
                ]),
            },
            input_dim,
            latent_dim,
        },
        ArchPreset::Toy => ArchSet {
            encoder: chain(
                "enc",
                input_dim,
                vec![lrelu(32), lrelu(16), LayerSpec::dense(latent_dim, Linear)],
            ),
            generator: chain(
                "gen",
                latent_dim,
                vec![
                    LayerSpec::dense(16, Relu),
                    LayerSpec::dense(32, Relu),
                    LayerSpec::dense(input_dim, Linear),
                ],
            ),
            d_xz: NetworkSpec {
                name: "d_xz".into(),
                input_dims: vec![input_dim, latent_dim],
                branches: vec![
                    sn_branch(vec![0], vec![lrelu(32).batch_norm()]),
                    sn_branch(vec![1], vec![lrelu(32)]),
                ],
                joint: sn(vec![lrelu(32), LayerSpec::dense(1, Sigmoid)]),
            },
            d_xx: NetworkSpec {
                name: "d_xx".into(),
                input_dims: vec![input_dim, input_dim],
                branches: vec![pass(vec![0, 1])],
                joint: sn(vec![lrelu(32), lrelu(16), LayerSpec::dense(1, Sigmoid)]),
            },
            d_zz: NetworkSpec {
                name: "d_zz".into(),
                input_dims: vec![latent_dim, latent_dim],
                branches: vec![pass(vec![0, 1])],
                joint: sn(vec![lrelu(16), lrelu(8), LayerSpec::dense(1, Sigmoid)]),
            },
            d_xxzz: NetworkSpec {
                name: "d_xxzz".into(),
                input_dims: vec![input_dim, input_dim, latent_dim, latent_dim],
                branches: vec![
                    sn_branch(vec![0, 1], vec![lrelu(32).batch_norm(), lrelu(16)]),
                    sn_branch(vec![2, 3], vec![lrelu(16)]),
                ],
                joint: sn(vec![lrelu(32), lrelu(16), LayerSpec::dense(1, Sigmoid)]),
            },
            input_dim,
            latent_dim,
        },
    };
    for s in [
        &set.encoder,
        &set.generator,
        &set.d_xz,
        &set.d_xx,
        &set.d_zz,
        &set.d_xxzz,
    ] {
        s.validate()?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabular_encoder_param_count_is_frozen() {
        // 274*256+256 + 256*128+128 + 128*64+64.
        let set = default_arch(ArchPreset::Tabular, 274, 64).unwrap();
        assert_eq!(set.encoder.param_count(), 111_552);
    }

    #[test]
    fn generator_ends_at_input_dim() {
        for (preset, input) in [
            (ArchPreset::Tabular, 274),
            (ArchPreset::Kdd, 121),
            (ArchPreset::Toy, 2),
        ] {
            let latent = preset.default_latent_dim();
            let set = default_arch(preset, input, latent).unwrap();
            assert_eq!(set.generator.output_width(), input);
            assert_eq!(set.encoder.output_width(), latent);
        }
    }

    #[test]
    fn discriminator_arities() {
        let set = default_arch(ArchPreset::Tabular, 10, 4).unwrap();
        assert_eq!(set.d_xz.arity(), 2);
        assert_eq!(set.d_xx.arity(), 2);
        assert_eq!(set.d_zz.arity(), 2);
        assert_eq!(set.d_xxzz.arity(), 4);
        assert_eq!(set.d_xz.input_dims, vec![10, 4]);
        assert_eq!(set.d_xxzz.input_dims, vec![10, 10, 4, 4]);
    }

    #[test]
    fn spectral_norm_only_on_discriminators() {
        let set = default_arch(ArchPreset::Kdd, 121, 1).unwrap();
        let no_sn = |s: &NetworkSpec| {
            s.branches
                .iter()
                .flat_map(|b| &b.layers)
                .chain(&s.joint)
                .all(|l| !l.spectral_norm)
        };
        let all_sn = |s: &NetworkSpec| {
            s.branches
                .iter()
                .flat_map(|b| &b.layers)
                .chain(&s.joint)
                .all(|l| l.spectral_norm)
        };
        assert!(no_sn(&set.encoder) && no_sn(&set.generator));
        for d in [&set.d_xz, &set.d_xx, &set.d_zz, &set.d_xxzz] {
            assert!(all_sn(d));
        }
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(default_arch(ArchPreset::Toy, 0, 2).is_err());
        assert!(default_arch(ArchPreset::Toy, 2, 0).is_err());
    }
}
