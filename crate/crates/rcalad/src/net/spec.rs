//! Declarative descriptions of feed-forward networks.
//!
//! A network reads one or more input slots. Branches consume disjoint slots
//! (concatenated in slot order), and the joint stack runs on the
//! concatenation of all branch outputs. Single-input encoders fit the same
//! shape with one empty branch and all layers in the joint stack.

use crate::autodiff::tape::Activation;
use crate::error::{Error, Result};

/// One dense layer plus its attached features.
///
/// Runtime order within a layer is affine, batch norm, activation, dropout.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
    pub spectral_norm: bool,
}

impl LayerSpec {
    pub fn dense(width: usize, activation: Activation) -> LayerSpec {
        LayerSpec {
            width,
            activation,
            batch_norm: false,
            dropout: 0.0,
            spectral_norm: false,
        }
    }

    pub fn batch_norm(mut self) -> LayerSpec {
        self.batch_norm = true;
        self
    }

    pub fn dropout(mut self, rate: f64) -> LayerSpec {
        self.dropout = rate;
        self
    }

    pub fn spectral_norm(mut self) -> LayerSpec {
        self.spectral_norm = true;
        self
    }
}

/// A stack of layers reading a subset of the network's input slots.
#[derive(Clone, Debug)]
pub struct BranchSpec {
    /// Indices into the network's input slots, concatenated in this order.
    pub inputs: Vec<usize>,
    /// May be empty, in which case the branch passes its inputs through.
    pub layers: Vec<LayerSpec>,
}

/// A complete network: input slots, branches, and the joint stack.
#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub name: String,
    /// Width of each input slot; the slot count is the network's arity.
    pub input_dims: Vec<usize>,
    pub branches: Vec<BranchSpec>,
    pub joint: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Structural validation: every slot consumed exactly once, positive
    /// widths, dropout rates in range.
    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() {
            return Err(Error::Invalid(format!("network `{}` has no inputs", self.name)));
        }
        let mut seen = vec![false; self.input_dims.len()];
        for b in &self.branches {
            for &slot in &b.inputs {
                if slot >= seen.len() {
                    return Err(Error::Invalid(format!(
                        "network `{}` references input slot {} but has arity {}",
                        self.name,
                        slot,
                        seen.len()
                    )));
                }
                if seen[slot] {
                    return Err(Error::Invalid(format!(
                        "network `{}` consumes input slot {} twice",
                        self.name, slot
                    )));
                }
                seen[slot] = true;
            }
        }
        if let Some(unused) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!(
                "network `{}` never consumes input slot {}",
                self.name, unused
            )));
        }
        for (d, &w) in self.input_dims.iter().enumerate() {
            if w == 0 {
                return Err(Error::Invalid(format!(
                    "network `{}` input slot {} has width 0",
                    self.name, d
                )));
            }
        }
        let all_layers = self
            .branches
            .iter()
            .flat_map(|b| &b.layers)
            .chain(&self.joint);
        for l in all_layers {
            if l.width == 0 {
                return Err(Error::Invalid(format!("network `{}` has a zero-width layer", self.name)));
            }
            if !(0.0..=1.0).contains(&l.dropout) {
                return Err(Error::Invalid(format!(
                    "network `{}` has dropout {} outside [0, 1]",
                    self.name, l.dropout
                )));
            }
        }
        if self.joint.is_empty() && self.branches.iter().all(|b| b.layers.is_empty()) {
            return Err(Error::Invalid(format!("network `{}` has no layers", self.name)));
        }
        Ok(())
    }

    /// Arity of the network.
    pub fn arity(&self) -> usize {
        self.input_dims.len()
    }

    /// Output width: the last joint layer, or the concatenated branch output.
    pub fn output_width(&self) -> usize {
        if let Some(l) = self.joint.last() {
            return l.width;
        }
        self.branches.iter().map(|b| self.branch_output_width(b)).sum()
    }

    fn branch_output_width(&self, b: &BranchSpec) -> usize {
        if let Some(l) = b.layers.last() {
            l.width
        } else {
            b.inputs.iter().map(|&s| self.input_dims[s]).sum()
        }
    }

    /// Number of scalar parameters (weights, biases, batch-norm affine).
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for b in &self.branches {
            let mut fan_in: usize = b.inputs.iter().map(|&s| self.input_dims[s]).sum();
            for l in &b.layers {
                total += layer_params(fan_in, l);
                fan_in = l.width;
            }
        }
        let mut fan_in: usize = self.branches.iter().map(|b| self.branch_output_width(b)).sum();
        for l in &self.joint {
            total += layer_params(fan_in, l);
            fan_in = l.width;
        }
        total
    }
}

fn layer_params(fan_in: usize, l: &LayerSpec) -> usize {
    let mut n = fan_in * l.width + l.width;
    if l.batch_norm {
        n += 2 * l.width;
    }
    n
}

/// Convenience for single-input stacks: one pass-through branch, layers in
/// the joint position.
pub fn chain(name: &str, input_dim: usize, layers: Vec<LayerSpec>) -> NetworkSpec {
    NetworkSpec {
        name: name.to_string(),
        input_dims: vec![input_dim],
        branches: vec![BranchSpec { inputs: vec![0], layers: Vec::new() }],
        joint: layers,
    }
}
