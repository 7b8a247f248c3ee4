//! Network descriptions, materialized layers, and the six-network bundle
//! (encoder, generator, four discriminators) that makes up one model.

pub mod layer;
pub mod network;
pub mod presets;
pub mod spec;

pub use layer::{BnState, Layer, PassCtx, BN_EPS, BN_MOMENTUM};
pub use network::{concat_tensors, DiscEval, DiscNodes, Network};
pub use presets::{default_arch, ArchPreset, ArchSet, LRELU_SLOPE};
pub use spec::{chain, BranchSpec, LayerSpec, NetworkSpec};

use crate::autodiff::rng::RngStream;
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

/// Which discriminator to address.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscKind {
    Xz,
    Xx,
    Zz,
    Xxzz,
}

/// Encoder, generator, and the four discriminators of one model.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub enc: Network,
    pub gen: Network,
    pub d_xz: Network,
    pub d_xx: Network,
    pub d_zz: Network,
    pub d_xxzz: Network,
    pub input_dim: usize,
    pub latent_dim: usize,
}

impl ModelBundle {
    /// Builds and initializes all six networks. Weights are drawn from a
    /// dedicated substream in a fixed network order, so the same seed always
    /// yields the same model.
    pub fn build(arch: &ArchSet, rng: &mut RngStream) -> Result<ModelBundle> {
        let mut init = rng.substream("init");
        Ok(ModelBundle {
            enc: Network::build(arch.encoder.clone(), &mut init)?,
            gen: Network::build(arch.generator.clone(), &mut init)?,
            d_xz: Network::build(arch.d_xz.clone(), &mut init)?,
            d_xx: Network::build(arch.d_xx.clone(), &mut init)?,
            d_zz: Network::build(arch.d_zz.clone(), &mut init)?,
            d_xxzz: Network::build(arch.d_xxzz.clone(), &mut init)?,
            input_dim: arch.input_dim,
            latent_dim: arch.latent_dim,
        })
    }

    /// `E(x)` in inference mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.enc.forward_eval(&[x])
    }

    /// `G(z)` in inference mode.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.gen.forward_eval(&[z])
    }

    /// Runs one discriminator in inference mode.
    pub fn discriminate(&self, which: DiscKind, inputs: &[&Tensor]) -> Result<DiscEval> {
        self.disc(which).discriminate_eval(inputs)
    }

    pub fn disc(&self, which: DiscKind) -> &Network {
        match which {
            DiscKind::Xz => &self.d_xz,
            DiscKind::Xx => &self.d_xx,
            DiscKind::Zz => &self.d_zz,
            DiscKind::Xxzz => &self.d_xxzz,
        }
    }

    fn nets(&self) -> [&Network; 6] {
        [&self.enc, &self.gen, &self.d_xz, &self.d_xx, &self.d_zz, &self.d_xxzz]
    }

    fn nets_mut(&mut self) -> [&mut Network; 6] {
        [
            &mut self.enc,
            &mut self.gen,
            &mut self.d_xz,
            &mut self.d_xx,
            &mut self.d_zz,
            &mut self.d_xxzz,
        ]
    }

    /// Visits every trainable parameter in a stable global order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for n in self.nets() {
            n.visit_params(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for n in self.nets_mut() {
            n.visit_params_mut(f);
        }
    }

    /// Visits non-trainable state (batch-norm running moments, spectral
    /// vectors) in the same global order as the parameters.
    pub fn visit_state(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for n in self.nets() {
            n.visit_state(f);
        }
    }

    pub fn visit_state_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        for n in self.nets_mut() {
            n.visit_state_mut(f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    /// Copies one parameter out by name.
    pub fn param_clone(&self, name: &str) -> Option<Tensor> {
        let mut found = None;
        self.visit_params(&mut |n, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }

    /// Overwrites one parameter's values by name.
    pub fn set_param(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let mut hit = false;
        let mut bad = None;
        self.visit_params_mut(&mut |n, t| {
            if n == name {
                hit = true;
                if t.numel() == values.len() {
                    t.data_mut().copy_from_slice(values);
                } else {
                    bad = Some((t.numel(), values.len()));
                }
            }
        });
        if let Some((want, got)) = bad {
            return Err(crate::error::Error::Invalid(format!(
                "parameter `{name}` has {want} entries, got {got}"
            )));
        }
        if !hit {
            return Err(crate::error::Error::Invalid(format!("no parameter named `{name}`")));
        }
        Ok(())
    }
}
