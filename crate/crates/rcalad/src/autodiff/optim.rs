//! Adaptive-moment (Adam) parameter updates.
//!
//! One [`OptimizerState`] covers a group of named parameters that step
//! together; the trainer keeps one for the discriminators and one for the
//! encoder/generator pair. Moment buffers are keyed by parameter name so
//! checkpoints can restore them without caring about traversal order.

use std::collections::BTreeMap;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..Default::default() }
    }
}

#[derive(Clone, Debug, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment buffers plus the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    t: u64,
    slots: BTreeMap<String, Slot>,
}

impl OptimizerState {
    pub fn new() -> OptimizerState {
        OptimizerState::default()
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Advances the step counter. Call exactly once per optimization step,
    /// before the per-parameter updates of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies one Adam update to a single named parameter, using the current
    /// step count for bias correction.
    pub fn update(
        &mut self,
        cfg: &AdamConfig,
        name: &str,
        param: &mut [f64],
        grad: &[f64],
    ) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::Invalid(format!(
                "adam update for `{name}`: parameter has {} entries, gradient {}",
                param.len(),
                grad.len()
            )));
        }
        if self.t == 0 {
            return Err(Error::Invalid(
                "adam update before begin_step; the bias correction needs t >= 1".into(),
            ));
        }
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
        });
        if slot.m.len() != param.len() {
            return Err(Error::Invalid(format!(
                "adam state for `{name}` has {} entries, parameter {}",
                slot.m.len(),
                param.len()
            )));
        }
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = slot.m[i] / c1;
            let v_hat = slot.v[i] / c2;
            param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }

    /// Iterates slots in name order, for serialization.
    pub fn slots(&self) -> impl Iterator<Item = (&str, &[f64], &[f64])> {
        self.slots.iter().map(|(k, s)| (k.as_str(), s.m.as_slice(), s.v.as_slice()))
    }

    /// Restores one slot; used when loading checkpoints.
    pub fn restore_slot(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if m.len() != v.len() {
            return Err(Error::Invalid(format!(
                "adam slot `{name}`: m has {} entries, v {}",
                m.len(),
                v.len()
            )));
        }
        self.slots.insert(name.to_string(), Slot { m, v });
        Ok(())
    }

    pub fn set_t(&mut self, t: u64) {
        self.t = t;
    }
}

/// One optimizer step over an aligned set of parameters and gradients.
pub fn adam_step(
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    params: &mut [(&str, &mut Tensor)],
    grads: &[&[f64]],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Invalid(format!(
            "adam_step got {} parameters and {} gradients",
            params.len(),
            grads.len()
        )));
    }
    state.begin_step();
    for ((name, p), g) in params.iter_mut().zip(grads) {
        state.update(cfg, name, p.data_mut(), g)?;
    }
    Ok(())
}
