//! Runtime state and forward passes for a single dense layer.

use std::collections::HashMap;

use crate::autodiff::rng::RngStream;
use crate::autodiff::spectral::{spectral_normalize, spectral_normalize_eval, SpectralState};
use crate::autodiff::tape::{Activation, NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;
use crate::net::spec::LayerSpec;

/// Batch-norm affine parameters and running statistics.
#[derive(Clone, Debug)]
pub struct BnState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;
/// Weight on the old running statistic per update.
pub const BN_MOMENTUM: f64 = 0.9;

/// A materialized layer: parameters plus non-trainable state.
#[derive(Clone, Debug)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Tensor,
    pub b: Tensor,
    pub bn: Option<BnState>,
    pub sn: Option<SpectralState>,
}

impl Layer {
    /// Initializes weights with fan-in scaled Gaussians: std `sqrt(2/fan_in)`
    /// for rectified activations, `sqrt(1/fan_in)` otherwise. Biases start at
    /// zero, batch norm at identity, the spectral vector at a random unit.
    pub fn init(fan_in: usize, spec: &LayerSpec, rng: &mut RngStream) -> Layer {
        let gain = match spec.activation {
            Activation::Relu | Activation::LRelu(_) => 2.0,
            _ => 1.0,
        };
        let std = (gain / fan_in as f64).sqrt();
        let mut w = Tensor::zeros(fan_in, spec.width);
        rng.fill_normal(w.data_mut(), 0.0, std);
        let b = Tensor::zeros(1, spec.width);
        let bn = spec.batch_norm.then(|| BnState {
            gamma: Tensor::filled(1, spec.width, 1.0),
            beta: Tensor::zeros(1, spec.width),
            running_mean: vec![0.0; spec.width],
            running_var: vec![1.0; spec.width],
        });
        let sn = spec.spectral_norm.then(|| SpectralState::init(fan_in, rng));
        Layer {
            spec: spec.clone(),
            w,
            b,
            bn,
            sn,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }
}

/// Per-pass bookkeeping shared by every network forwarded on one tape.
///
/// The cache keys are parameter paths, so a discriminator evaluated on
/// several input sets within a pass registers its parameters once, reuses
/// one normalized weight node, and advances its spectral vector once.
pub struct PassCtx<'r> {
    /// Register parameters as gradient-bearing leaves.
    pub trainable: bool,
    /// Advance batch-norm running stats and spectral vectors.
    pub update_stats: bool,
    /// Power iterations per spectral normalization in this pass.
    pub sn_iters: usize,
    pub rng_dropout: &'r mut RngStream,
    /// Parameters registered this pass, in registration order.
    pub param_ids: Vec<(String, NodeId)>,
    cached: HashMap<String, CachedLayer>,
}

#[derive(Clone, Copy)]
struct CachedLayer {
    w_eff: NodeId,
    b: NodeId,
    bn: Option<(NodeId, NodeId)>,
}

impl<'r> PassCtx<'r> {
    pub fn new(trainable: bool, update_stats: bool, sn_iters: usize, rng_dropout: &'r mut RngStream) -> PassCtx<'r> {
        PassCtx {
            trainable,
            update_stats,
            sn_iters,
            rng_dropout,
            param_ids: Vec::new(),
            cached: HashMap::new(),
        }
    }
}

impl Layer {
    /// Training-mode forward on the tape. `path` names this layer for the
    /// pass cache and optimizer ("d_xx.joint.l0" and the like).
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        ctx: &mut PassCtx,
        path: &str,
        x: NodeId,
    ) -> Result<NodeId> {
        let cached = match ctx.cached.get(path) {
            Some(c) => *c,
            Option::None => {
                let c = self.register(tape, ctx, path)?;
                ctx.cached.insert(path.to_string(), c);
                c
            }
        };
        let mut h = tape.matmul(x, cached.w_eff)?;
        h = tape.add_row(h, cached.b)?;
        if let Some((gamma, beta)) = cached.bn {
            let (y, batch_mean, batch_var) = tape.batch_norm(h, gamma, beta, BN_EPS)?;
            if ctx.update_stats {
                let bn = self.bn.as_mut().expect("bn params exist");
                for (r, m) in bn.running_mean.iter_mut().zip(&batch_mean) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                }
                for (r, v) in bn.running_var.iter_mut().zip(&batch_var) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                }
            }
            h = y;
        }
        h = tape.activation(self.spec.activation, h);
        if self.spec.dropout > 0.0 {
            h = tape.dropout(h, self.spec.dropout, ctx.rng_dropout)?;
        }
        Ok(h)
    }

    /// Affine part only, on the tape. Discriminator output layers use this
    /// to expose the pre-sigmoid logit.
    pub fn forward_train_linear(
        &mut self,
        tape: &mut Tape,
        ctx: &mut PassCtx,
        path: &str,
        x: NodeId,
    ) -> Result<NodeId> {
        let cached = match ctx.cached.get(path) {
            Some(c) => *c,
            Option::None => {
                let c = self.register(tape, ctx, path)?;
                ctx.cached.insert(path.to_string(), c);
                c
            }
        };
        let h = tape.matmul(x, cached.w_eff)?;
        tape.add_row(h, cached.b)
    }

    /// Puts this layer's parameters on the tape and derives the effective
    /// (possibly spectrally normalized) weight node.
    fn register(&mut self, tape: &mut Tape, ctx: &mut PassCtx, path: &str) -> Result<CachedLayer> {
        let reg = |tape: &mut Tape, t: &Tensor, trainable: bool| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        let w_id = reg(tape, &self.w, ctx.trainable);
        let b_id = reg(tape, &self.b, ctx.trainable);
        if ctx.trainable {
            ctx.param_ids.push((format!("{path}.w"), w_id));
            ctx.param_ids.push((format!("{path}.b"), b_id));
        }
        let w_eff = match &mut self.sn {
            Some(state) => {
                let out = spectral_normalize(tape, w_id, &state.u, ctx.sn_iters)?;
                if ctx.update_stats {
                    state.u = out.new_u;
                }
                out.w_bar
            }
            Option::None => w_id,
        };
        let bn = match &self.bn {
            Some(bn) => {
                let g_id = reg(tape, &bn.gamma, ctx.trainable);
                let be_id = reg(tape, &bn.beta, ctx.trainable);
                if ctx.trainable {
                    ctx.param_ids.push((format!("{path}.gamma"), g_id));
                    ctx.param_ids.push((format!("{path}.beta"), be_id));
                }
                Some((g_id, be_id))
            }
            Option::None => Option::None,
        };
        Ok(CachedLayer { w_eff, b: b_id, bn })
    }

    /// Affine part only, in inference mode.
    pub fn forward_eval_linear(&self, x: &Tensor) -> Result<Tensor> {
        let w_eff = match &self.sn {
            Some(state) => spectral_normalize_eval(&self.w, &state.u, 1)?.0,
            Option::None => self.w.clone(),
        };
        let [n, _] = x.shape();
        let width = self.spec.width;
        let mut out = Tensor::zeros(n, width);
        crate::autodiff::kernels::gemm(
            n,
            self.fan_in(),
            width,
            1.0,
            x.data(),
            false,
            w_eff.data(),
            false,
            0.0,
            out.data_mut(),
        );
        let od = out.data_mut();
        for i in 0..n {
            for j in 0..width {
                od[i * width + j] += self.b.data()[j];
            }
        }
        Ok(out)
    }

    /// Inference-mode forward: running batch-norm statistics, no dropout,
    /// spectral normalization from the stored vector without advancing it.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.forward_eval_linear(x)?;
        let [n, _] = x.shape();
        let width = self.spec.width;
        let od = out.data_mut();
        if let Some(bn) = &self.bn {
            for i in 0..n {
                for j in 0..width {
                    let v = od[i * width + j];
                    let norm = (v - bn.running_mean[j]) / (bn.running_var[j] + BN_EPS).sqrt();
                    od[i * width + j] = bn.gamma.data()[j] * norm + bn.beta.data()[j];
                }
            }
        }
        for v in od.iter_mut() {
            *v = apply_activation(self.spec.activation, *v);
        }
        Ok(out)
    }
}

fn apply_activation(a: Activation, x: f64) -> f64 {
    match a {
        Activation::LRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::None => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_scales_by_fan_in() {
        let mut rng = RngStream::from_seed(1);
        let spec = LayerSpec::dense(64, Activation::LRelu(0.2));
        let layer = Layer::init(256, &spec, &mut rng);
        let std = (layer.w.data().iter().map(|v| v * v).sum::<f64>() / layer.w.numel() as f64).sqrt();
        let want = (2.0 / 256.0f64).sqrt();
        assert!((std - want).abs() / want < 0.1, "std {std}, want {want}");
        assert!(layer.b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_and_eval_agree_without_bn_or_dropout() {
        let mut rng = RngStream::from_seed(2);
        let spec = LayerSpec::dense(5, Activation::Tanh);
        let mut layer = Layer::init(3, &spec, &mut rng);
        let mut x = Tensor::zeros(4, 3);
        rng.fill_normal(x.data_mut(), 0.0, 1.0);

        let eval = layer.forward_eval(&x).unwrap();
        let mut tape = Tape::new();
        let x_id = tape.constant(&x);
        let mut dropout_rng = RngStream::from_seed(0);
        let mut ctx = PassCtx::new(true, false, 1, &mut dropout_rng);
        let y = layer.forward_train(&mut tape, &mut ctx, "l", x_id).unwrap();
        for (a, b) in tape.data(y).iter().zip(eval.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        // w and b registered for the optimizer.
        assert_eq!(ctx.param_ids.len(), 2);
    }

    #[test]
    fn pass_cache_registers_params_once() {
        let mut rng = RngStream::from_seed(3);
        let spec = LayerSpec::dense(4, Activation::LRelu(0.2)).spectral_norm();
        let mut layer = Layer::init(6, &spec, &mut rng);
        let mut x = Tensor::zeros(2, 6);
        rng.fill_normal(x.data_mut(), 0.0, 1.0);
        let mut tape = Tape::new();
        let x_id = tape.constant(&x);
        let mut dropout_rng = RngStream::from_seed(0);
        let mut ctx = PassCtx::new(true, true, 1, &mut dropout_rng);
        let u_before = layer.sn.as_ref().unwrap().u.clone();
        let a = layer.forward_train(&mut tape, &mut ctx, "l", x_id).unwrap();
        let b = layer.forward_train(&mut tape, &mut ctx, "l", x_id).unwrap();
        assert_eq!(ctx.param_ids.len(), 2, "second call must reuse the cache");
        assert_eq!(tape.data(a), tape.data(b));
        // u advanced exactly once.
        let u_after = &layer.sn.as_ref().unwrap().u;
        assert_ne!(u_before, *u_after);
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut rng = RngStream::from_seed(4);
        let spec = LayerSpec::dense(3, Activation::None).batch_norm();
        let mut layer = Layer::init(3, &spec, &mut rng);
        // Identity-ish weight so the pre-BN activations have a known mean.
        layer.w = Tensor::new([3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::new([2, 3], vec![1., 10., 100., 3., 30., 300.]).unwrap();
        let mut tape = Tape::new();
        let x_id = tape.constant(&x);
        let mut dropout_rng = RngStream::from_seed(0);
        let mut ctx = PassCtx::new(false, true, 1, &mut dropout_rng);
        layer.forward_train(&mut tape, &mut ctx, "l", x_id).unwrap();
        let bn = layer.bn.as_ref().unwrap();
        // running = 0.9 * 0 + 0.1 * batch_mean.
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_mean[1] - 2.0).abs() < 1e-12);
        assert!((bn.running_mean[2] - 20.0).abs() < 1e-12);
    }
}
