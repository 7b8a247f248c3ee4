//! A materialized network and its two forward paths.

use crate::autodiff::tape::{Activation, NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::net::layer::{Layer, PassCtx};
use crate::net::spec::NetworkSpec;
use crate::RngStream;

/// Discriminator outputs on the tape.
#[derive(Clone, Copy, Debug)]
pub struct DiscNodes {
    /// Pre-sigmoid output, `[n, 1]`.
    pub logit: NodeId,
    /// Sigmoid of the logit, `[n, 1]`.
    pub prob: NodeId,
    /// Last hidden activation before the output unit.
    pub features: NodeId,
}

/// Discriminator outputs in inference mode.
#[derive(Clone, Debug)]
pub struct DiscEval {
    pub logit: Tensor,
    pub prob: Tensor,
    pub features: Tensor,
}

/// Parameters and state for one network.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub branches: Vec<Vec<Layer>>,
    pub joint: Vec<Layer>,
}

impl Network {
    /// Validates the spec and initializes every layer. Draw order is fixed
    /// (branches first, then the joint stack), so a given rng stream always
    /// produces the same weights.
    pub fn build(spec: NetworkSpec, rng: &mut RngStream) -> Result<Network> {
        spec.validate()?;
        let mut branches = Vec::with_capacity(spec.branches.len());
        for b in &spec.branches {
            let mut fan_in: usize = b.inputs.iter().map(|&s| spec.input_dims[s]).sum();
            let mut layers = Vec::with_capacity(b.layers.len());
            for ls in &b.layers {
                let l = Layer::init(fan_in, ls, rng);
                fan_in = ls.width;
                layers.push(l);
            }
            branches.push(layers);
        }
        let mut fan_in: usize = branches
            .iter()
            .zip(&spec.branches)
            .map(|(built, bs)| {
                built
                    .last()
                    .map(|l| l.spec.width)
                    .unwrap_or_else(|| bs.inputs.iter().map(|&s| spec.input_dims[s]).sum())
            })
            .sum();
        let mut joint = Vec::with_capacity(spec.joint.len());
        for ls in &spec.joint {
            let l = Layer::init(fan_in, ls, rng);
            fan_in = ls.width;
            joint.push(l);
        }
        Ok(Network { spec, branches, joint })
    }

    pub fn arity(&self) -> usize {
        self.spec.arity()
    }

    fn check_inputs(&self, shapes: &[[usize; 2]]) -> Result<()> {
        if shapes.len() != self.arity() {
            return Err(Error::Invalid(format!(
                "network `{}` takes {} inputs, got {}",
                self.spec.name,
                self.arity(),
                shapes.len()
            )));
        }
        let rows = shapes[0][0];
        for (slot, s) in shapes.iter().enumerate() {
            if s[1] != self.spec.input_dims[slot] {
                return Err(Error::ShapeMismatch {
                    op: "network input",
                    left: vec![s[0], s[1]],
                    right: vec![rows, self.spec.input_dims[slot]],
                });
            }
            if s[0] != rows {
                return Err(Error::ShapeMismatch {
                    op: "network input rows",
                    left: vec![s[0], s[1]],
                    right: vec![rows, self.spec.input_dims[slot]],
                });
            }
        }
        Ok(())
    }

    /// Training-mode forward through every layer.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        ctx: &mut PassCtx,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let (h, _skipped) = self.forward_train_inner(tape, ctx, inputs, false)?;
        Ok(h)
    }

    /// Training-mode forward for discriminators: the final layer contributes
    /// its affine part as the logit, and the activation entering it is the
    /// feature vector.
    pub fn discriminate_train(
        &mut self,
        tape: &mut Tape,
        ctx: &mut PassCtx,
        inputs: &[NodeId],
    ) -> Result<DiscNodes> {
        self.check_discriminator_shape()?;
        let (features, logit) = {
            let (f, l) = self.forward_train_inner(tape, ctx, inputs, true)?;
            (f, l.expect("skip_last yields the logit"))
        };
        let prob = tape.activation(Activation::Sigmoid, logit);
        Ok(DiscNodes { logit, prob, features })
    }

    /// Runs branches then the joint stack. With `split_last`, stops before
    /// the final joint layer and returns `(features, Some(affine output))`.
    fn forward_train_inner(
        &mut self,
        tape: &mut Tape,
        ctx: &mut PassCtx,
        inputs: &[NodeId],
        split_last: bool,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let shapes: Vec<[usize; 2]> = inputs.iter().map(|&id| tape.shape(id)).collect();
        self.check_inputs(&shapes)?;
        let name = self.spec.name.clone();
        let mut branch_outs = Vec::with_capacity(self.branches.len());
        for (bi, (layers, bs)) in self.branches.iter_mut().zip(&self.spec.branches).enumerate() {
            let slot_ids: Vec<NodeId> = bs.inputs.iter().map(|&s| inputs[s]).collect();
            let mut h = tape.concat(&slot_ids)?;
            for (li, layer) in layers.iter_mut().enumerate() {
                h = layer.forward_train(tape, ctx, &format!("{name}.b{bi}.l{li}"), h)?;
            }
            branch_outs.push(h);
        }
        let mut h = tape.concat(&branch_outs)?;
        let n_joint = self.joint.len();
        for (li, layer) in self.joint.iter_mut().enumerate() {
            if split_last && li + 1 == n_joint {
                let logit = layer.forward_train_linear(tape, ctx, &format!("{name}.joint.l{li}"), h)?;
                return Ok((h, Some(logit)));
            }
            h = layer.forward_train(tape, ctx, &format!("{name}.joint.l{li}"), h)?;
        }
        Ok((h, None))
    }

    /// Inference-mode forward through every layer.
    pub fn forward_eval(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let shapes: Vec<[usize; 2]> = inputs.iter().map(|t| t.shape()).collect();
        self.check_inputs(&shapes)?;
        let mut branch_outs = Vec::with_capacity(self.branches.len());
        for (layers, bs) in self.branches.iter().zip(&self.spec.branches) {
            let slots: Vec<&Tensor> = bs.inputs.iter().map(|&s| inputs[s]).collect();
            let mut h = concat_tensors(&slots)?;
            for layer in layers {
                h = layer.forward_eval(&h)?;
            }
            branch_outs.push(h);
        }
        let refs: Vec<&Tensor> = branch_outs.iter().collect();
        let mut h = concat_tensors(&refs)?;
        for layer in &self.joint {
            h = layer.forward_eval(&h)?;
        }
        Ok(h)
    }

    /// Inference-mode discriminator forward.
    pub fn discriminate_eval(&self, inputs: &[&Tensor]) -> Result<DiscEval> {
        self.check_discriminator_shape()?;
        let shapes: Vec<[usize; 2]> = inputs.iter().map(|t| t.shape()).collect();
        self.check_inputs(&shapes)?;
        let mut branch_outs = Vec::with_capacity(self.branches.len());
        for (layers, bs) in self.branches.iter().zip(&self.spec.branches) {
            let slots: Vec<&Tensor> = bs.inputs.iter().map(|&s| inputs[s]).collect();
            let mut h = concat_tensors(&slots)?;
            for layer in layers {
                h = layer.forward_eval(&h)?;
            }
            branch_outs.push(h);
        }
        let refs: Vec<&Tensor> = branch_outs.iter().collect();
        let mut h = concat_tensors(&refs)?;
        for layer in &self.joint[..self.joint.len() - 1] {
            h = layer.forward_eval(&h)?;
        }
        let features = h;
        let last = self.joint.last().expect("discriminator has an output layer");
        let logit = last.forward_eval_linear(&features)?;
        let mut prob = logit.clone();
        for v in prob.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        Ok(DiscEval { logit, prob, features })
    }

    /// Discriminators end in a single sigmoid unit with no batch norm or
    /// dropout on the output layer.
    fn check_discriminator_shape(&self) -> Result<()> {
        let last = self.joint.last().ok_or_else(|| {
            Error::Invalid(format!("network `{}` has an empty joint stack", self.spec.name))
        })?;
        let s = &last.spec;
        if s.width != 1 || s.activation != Activation::Sigmoid || s.batch_norm || s.dropout != 0.0 {
            return Err(Error::Invalid(format!(
                "network `{}` is not shaped like a discriminator: output must be one sigmoid unit without batch norm or dropout",
                self.spec.name
            )));
        }
        Ok(())
    }

    /// Visits parameters in a stable order (branches, then joint).
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let name = &self.spec.name;
        for (bi, layers) in self.branches.iter().enumerate() {
            for (li, l) in layers.iter().enumerate() {
                visit_layer_params(&format!("{name}.b{bi}.l{li}"), l, f);
            }
        }
        for (li, l) in self.joint.iter().enumerate() {
            visit_layer_params(&format!("{name}.joint.l{li}"), l, f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let name = self.spec.name.clone();
        for (bi, layers) in self.branches.iter_mut().enumerate() {
            for (li, l) in layers.iter_mut().enumerate() {
                visit_layer_params_mut(&format!("{name}.b{bi}.l{li}"), l, f);
            }
        }
        for (li, l) in self.joint.iter_mut().enumerate() {
            visit_layer_params_mut(&format!("{name}.joint.l{li}"), l, f);
        }
    }

    /// Visits non-trainable per-layer state: batch-norm running moments and
    /// spectral vectors.
    pub fn visit_state(&self, f: &mut dyn FnMut(&str, &[f64])) {
        let name = &self.spec.name;
        let mut each = |path: String, l: &Layer| {
            if let Some(bn) = &l.bn {
                f(&format!("{path}.bn_mean"), &bn.running_mean);
                f(&format!("{path}.bn_var"), &bn.running_var);
            }
            if let Some(sn) = &l.sn {
                f(&format!("{path}.sn_u"), &sn.u);
            }
        };
        for (bi, layers) in self.branches.iter().enumerate() {
            for (li, l) in layers.iter().enumerate() {
                each(format!("{name}.b{bi}.l{li}"), l);
            }
        }
        for (li, l) in self.joint.iter().enumerate() {
            each(format!("{name}.joint.l{li}"), l);
        }
    }

    pub fn visit_state_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        let name = self.spec.name.clone();
        let apply = |path: String, l: &mut Layer, f: &mut dyn FnMut(&str, &mut Vec<f64>)| {
            if let Some(bn) = &mut l.bn {
                f(&format!("{path}.bn_mean"), &mut bn.running_mean);
                f(&format!("{path}.bn_var"), &mut bn.running_var);
            }
            if let Some(sn) = &mut l.sn {
                f(&format!("{path}.sn_u"), &mut sn.u);
            }
        };
        for (bi, layers) in self.branches.iter_mut().enumerate() {
            for (li, l) in layers.iter_mut().enumerate() {
                apply(format!("{name}.b{bi}.l{li}"), l, f);
            }
        }
        for (li, l) in self.joint.iter_mut().enumerate() {
            apply(format!("{name}.joint.l{li}"), l, f);
        }
    }
}

fn visit_layer_params(path: &str, l: &Layer, f: &mut dyn FnMut(&str, &Tensor)) {
    f(&format!("{path}.w"), &l.w);
    f(&format!("{path}.b"), &l.b);
    if let Some(bn) = &l.bn {
        f(&format!("{path}.gamma"), &bn.gamma);
        f(&format!("{path}.beta"), &bn.beta);
    }
}

fn visit_layer_params_mut(path: &str, l: &mut Layer, f: &mut dyn FnMut(&str, &mut Tensor)) {
    f(&format!("{path}.w"), &mut l.w);
    f(&format!("{path}.b"), &mut l.b);
    if let Some(bn) = &mut l.bn {
        f(&format!("{path}.gamma"), &mut bn.gamma);
        f(&format!("{path}.beta"), &mut bn.beta);
    }
}

/// Column-wise concatenation of plain tensors.
pub fn concat_tensors(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Invalid("concat of zero tensors".into()));
    }
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let n = parts[0].rows();
    for p in parts {
        if p.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: parts[0].shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(n, total);
    for i in 0..n {
        let mut off = 0;
        for p in parts {
            let d = p.cols();
            out.data_mut()[i * total + off..i * total + off + d].copy_from_slice(p.row_slice(i));
            off += d;
        }
    }
    Ok(out)
}
