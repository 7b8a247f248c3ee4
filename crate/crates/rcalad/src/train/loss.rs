//! The adversarial objective: route wiring, per-term values, gradients.
//!
//! Every objective term is a batch-mean log probability from one
//! discriminator evaluated on one input pairing. The discriminator pass
//! maximizes real-route log-probabilities and fake-route
//! log-complements, with encoder and generator parameters held constant;
//! the generator/encoder pass flips the fake-side terms into their
//! non-saturating form, with discriminator parameters held constant.
//!
//! Route inventory, with `E` the encoder, `G` the generator, and `x~`
//! a supplementary draw:
//!
//! | term         | inputs                                |
//! |--------------|---------------------------------------|
//! | `d_xz` real  | `D_xz(x, E(x))`                       |
//! | `d_xz` fake  | `D_xz(G(z), z)`                       |
//! | `d_xx` real  | `D_xx(x, x)`                          |
//! | `d_xx` fake  | `D_xx(x, G(E(x)))`                    |
//! | `d_zz` real  | `D_zz(z, z)`                          |
//! | `d_zz` fake  | `D_zz(z, E(G(z)))`                    |
//! | `d_xxzz` real| `D_xxzz(x, x, E(x), E(x))`            |
//! | `d_xxzz` fake| `D_xxzz(x, G(E(x)), E(x), E(G(E(x))))`|
//! | `sigma`      | `D_xz(x~, E(x~))`, a fake pairing     |

use serde::{Deserialize, Serialize};

use crate::autodiff::rng::RngStream;
use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::net::layer::PassCtx;
use crate::net::ModelBundle;
use crate::train::config::{Toggles, TrainConfig};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm, so a saturated discriminator cannot yield an infinite loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Per-term loss values from one pass.
///
/// Each named term stores the negated batch mean of its expectation term,
/// so every entry is a positive cross-entropy-style contribution and
/// `d_total` is the plain sum of the enabled entries. Terms belonging to
/// disabled components are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d_xz_real: f64,
    pub d_xz_fake: f64,
    pub d_xx_real: Option<f64>,
    pub d_xx_fake: Option<f64>,
    pub d_zz_real: Option<f64>,
    pub d_zz_fake: Option<f64>,
    pub d_xxzz_real: Option<f64>,
    pub d_xxzz_fake: Option<f64>,
    pub sigma: Option<f64>,
    /// Discriminator loss: the sum of every enabled term above.
    pub d_total: f64,
    /// Generator/encoder loss over the fake-side routes.
    pub ge_total: f64,
}

impl LossBreakdown {
    /// The enabled terms in a fixed order, for logging.
    pub fn terms(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("d_xz_real", self.d_xz_real), ("d_xz_fake", self.d_xz_fake)];
        for (name, v) in [
            ("d_xx_real", self.d_xx_real),
            ("d_xx_fake", self.d_xx_fake),
            ("d_zz_real", self.d_zz_real),
            ("d_zz_fake", self.d_zz_fake),
            ("d_xxzz_real", self.d_xxzz_real),
            ("d_xxzz_fake", self.d_xxzz_fake),
            ("sigma", self.sigma),
        ] {
            if let Some(v) = v {
                out.push((name, v));
            }
        }
        out
    }
}

/// One independent dropout stream per network, so masks for one network
/// never depend on whether another network is enabled or evaluated first.
#[derive(Clone, Debug)]
pub struct DropoutRngs {
    pub enc: RngStream,
    pub gen: RngStream,
    pub d_xz: RngStream,
    pub d_xx: RngStream,
    pub d_zz: RngStream,
    pub d_xxzz: RngStream,
}

impl DropoutRngs {
    pub fn derive(base: &RngStream) -> DropoutRngs {
        DropoutRngs {
            enc: base.substream("drop.enc"),
            gen: base.substream("drop.gen"),
            d_xz: base.substream("drop.d_xz"),
            d_xx: base.substream("drop.d_xx"),
            d_zz: base.substream("drop.d_zz"),
            d_xxzz: base.substream("drop.d_xxzz"),
        }
    }

    /// Visits each stream with a stable name, for checkpointing.
    pub fn visit(&mut self, f: &mut dyn FnMut(&str, &mut RngStream)) {
        f("drop.enc", &mut self.enc);
        f("drop.gen", &mut self.gen);
        f("drop.d_xz", &mut self.d_xz);
        f("drop.d_xx", &mut self.d_xx);
        f("drop.d_zz", &mut self.d_zz);
        f("drop.d_xxzz", &mut self.d_xxzz);
    }
}

/// Which side of the alternating optimization a pass serves.
#[derive(Clone, Copy)]
struct PassPlan {
    d_trainable: bool,
    eg_trainable: bool,
    /// Advance batch-norm running stats and spectral vectors of the
    /// trainable group.
    update_stats: bool,
    sn_iters: usize,
    /// Forward the real-side routes (the discriminator objective needs
    /// them; the generator/encoder objective does not).
    want_real: bool,
}

/// Clamped probability nodes per route. `None` means the route is off or
/// not needed by this pass.
#[derive(Default)]
struct Routes {
    xz_real: Option<NodeId>,
    xz_fake: Option<NodeId>,
    xx_real: Option<NodeId>,
    xx_fake: Option<NodeId>,
    zz_real: Option<NodeId>,
    zz_fake: Option<NodeId>,
    xxzz_real: Option<NodeId>,
    xxzz_fake: Option<NodeId>,
    sigma: Option<NodeId>,
}

fn clamp_prob(tape: &mut Tape, p: NodeId) -> NodeId {
    tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Forwards the networks over every route the pass needs, and returns the
/// clamped route probabilities plus the registered trainable parameters.
#[allow(clippy::too_many_arguments)]
fn build_routes(
    tape: &mut Tape,
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    toggles: Toggles,
    rngs: &mut DropoutRngs,
    plan: PassPlan,
) -> Result<(Routes, Vec<(String, NodeId)>)> {
    let x_id = tape.constant(x);
    let z_id = tape.constant(z);

    let need_xhat = toggles.dxx || toggles.dxxzz;
    let need_zx = plan.want_real || need_xhat;
    let mut param_ids = Vec::new();

    // Encoder and generator productions, in a fixed order so random draws
    // line up across passes with the same toggles.
    let eg_stats = plan.update_stats && plan.eg_trainable;
    let mut ctx_e = PassCtx::new(plan.eg_trainable, eg_stats, plan.sn_iters, &mut rngs.enc);
    let mut ctx_g = PassCtx::new(plan.eg_trainable, eg_stats, plan.sn_iters, &mut rngs.gen);
    let z_x = if need_zx {
        Some(bundle.enc.forward_train(tape, &mut ctx_e, &[x_id])?)
    } else {
        None
    };
    let x_gen = bundle.gen.forward_train(tape, &mut ctx_g, &[z_id])?;
    let x_hat = if need_xhat {
        Some(bundle.gen.forward_train(tape, &mut ctx_g, &[z_x.expect("z_x precedes x_hat")])?)
    } else {
        None
    };
    let z_cycle = if toggles.dzz {
        Some(bundle.enc.forward_train(tape, &mut ctx_e, &[x_gen])?)
    } else {
        None
    };
    let z_hat = if toggles.dxxzz {
        Some(bundle.enc.forward_train(tape, &mut ctx_e, &[x_hat.expect("x_hat precedes z_hat")])?)
    } else {
        None
    };
    let sig_pair = if toggles.sigma {
        let xs = x_sig.ok_or_else(|| {
            Error::Invalid("the sigma term is enabled but no supplementary batch was given".into())
        })?;
        let xs_id = tape.constant(xs);
        let es = bundle.enc.forward_train(tape, &mut ctx_e, &[xs_id])?;
        Some((xs_id, es))
    } else {
        None
    };
    if plan.eg_trainable {
        param_ids.append(&mut ctx_e.param_ids);
        param_ids.append(&mut ctx_g.param_ids);
    }
    drop(ctx_e);
    drop(ctx_g);

    // Discriminator evaluations. Each discriminator gets one pass context,
    // so its parameters register once and its spectral vectors advance
    // once even though it scores several routes.
    let d_stats = plan.update_stats && plan.d_trainable;
    let mut routes = Routes::default();
    {
        let mut ctx = PassCtx::new(plan.d_trainable, d_stats, plan.sn_iters, &mut rngs.d_xz);
        if plan.want_real {
            let d = bundle.d_xz.discriminate_train(tape, &mut ctx, &[x_id, z_x.unwrap()])?;
            routes.xz_real = Some(clamp_prob(tape, d.prob));
        }
        let d = bundle.d_xz.discriminate_train(tape, &mut ctx, &[x_gen, z_id])?;
        routes.xz_fake = Some(clamp_prob(tape, d.prob));
        if let Some((xs_id, es)) = sig_pair {
            let d = bundle.d_xz.discriminate_train(tape, &mut ctx, &[xs_id, es])?;
            routes.sigma = Some(clamp_prob(tape, d.prob));
        }
        if plan.d_trainable {
            param_ids.append(&mut ctx.param_ids);
        }
    }
    if toggles.dxx {
        let mut ctx = PassCtx::new(plan.d_trainable, d_stats, plan.sn_iters, &mut rngs.d_xx);
        if plan.want_real {
            let d = bundle.d_xx.discriminate_train(tape, &mut ctx, &[x_id, x_id])?;
            routes.xx_real = Some(clamp_prob(tape, d.prob));
        }
        let d = bundle.d_xx.discriminate_train(tape, &mut ctx, &[x_id, x_hat.unwrap()])?;
        routes.xx_fake = Some(clamp_prob(tape, d.prob));
        if plan.d_trainable {
            param_ids.append(&mut ctx.param_ids);
        }
    }
    if toggles.dzz {
        let mut ctx = PassCtx::new(plan.d_trainable, d_stats, plan.sn_iters, &mut rngs.d_zz);
        if plan.want_real {
            let d = bundle.d_zz.discriminate_train(tape, &mut ctx, &[z_id, z_id])?;
            routes.zz_real = Some(clamp_prob(tape, d.prob));
        }
        let d = bundle.d_zz.discriminate_train(tape, &mut ctx, &[z_id, z_cycle.unwrap()])?;
        routes.zz_fake = Some(clamp_prob(tape, d.prob));
        if plan.d_trainable {
            param_ids.append(&mut ctx.param_ids);
        }
    }
    if toggles.dxxzz {
        let mut ctx = PassCtx::new(plan.d_trainable, d_stats, plan.sn_iters, &mut rngs.d_xxzz);
        let zx = z_x.expect("complete-cycle routes need z_x");
        if plan.want_real {
            let d = bundle
                .d_xxzz
                .discriminate_train(tape, &mut ctx, &[x_id, x_id, zx, zx])?;
            routes.xxzz_real = Some(clamp_prob(tape, d.prob));
        }
        let d = bundle.d_xxzz.discriminate_train(
            tape,
            &mut ctx,
            &[x_id, x_hat.unwrap(), zx, z_hat.unwrap()],
        )?;
        routes.xxzz_fake = Some(clamp_prob(tape, d.prob));
        if plan.d_trainable {
            param_ids.append(&mut ctx.param_ids);
        }
    }
    Ok((routes, param_ids))
}

/// Mean of `ln p` over the batch, as a scalar node.
fn mean_log(tape: &mut Tape, p: NodeId) -> NodeId {
    let l = tape.ln(p);
    tape.mean_all(l)
}

/// Mean of `ln (1 - p)` over the batch, as a scalar node.
fn mean_log1m(tape: &mut Tape, p: NodeId) -> NodeId {
    let neg = tape.scale(p, -1.0);
    let om = tape.add_const(neg, 1.0);
    let l = tape.ln(om);
    tape.mean_all(l)
}

fn finite_or(term: &'static str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, step })
    }
}

/// Scalar mean of `ln p` (or `ln (1-p)`) read back from node data.
fn mean_log_value(tape: &Tape, p: NodeId, complement: bool) -> f64 {
    let data = tape.data(p);
    let sum: f64 = data
        .iter()
        .map(|&v| if complement { (1.0 - v).ln() } else { v.ln() })
        .sum();
    sum / data.len() as f64
}

pub(crate) struct DiscPassOut {
    pub breakdown: LossBreakdown,
    pub grads: Vec<(String, Vec<f64>)>,
}

/// Builds the discriminator objective on a fresh tape and, on request,
/// its gradients with respect to the discriminator parameters.
pub(crate) fn discriminator_pass(
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    cfg: &TrainConfig,
    rngs: &mut DropoutRngs,
    update_stats: bool,
    want_grads: bool,
    step: u64,
) -> Result<DiscPassOut> {
    let toggles = cfg.toggles();
    let mut tape = Tape::new();
    let plan = PassPlan {
        d_trainable: true,
        eg_trainable: false,
        update_stats,
        sn_iters: cfg.sn_iters,
        want_real: true,
    };
    let (routes, param_ids) = build_routes(&mut tape, bundle, x, z, x_sig, toggles, rngs, plan)?;

    // Gather (name, node, uses-complement) for every enabled term; a term's
    // V contribution is the mean log, and its loss entry is the negation.
    let mut nodes: Vec<(&'static str, NodeId)> = Vec::new();
    let mut push = |tape: &mut Tape, name, p: Option<NodeId>, complement: bool| {
        if let Some(p) = p {
            let m = if complement { mean_log1m(tape, p) } else { mean_log(tape, p) };
            nodes.push((name, m));
        }
    };
    push(&mut tape, "d_xz_real", routes.xz_real, false);
    push(&mut tape, "d_xz_fake", routes.xz_fake, true);
    push(&mut tape, "d_xx_real", routes.xx_real, false);
    push(&mut tape, "d_xx_fake", routes.xx_fake, true);
    push(&mut tape, "d_zz_real", routes.zz_real, false);
    push(&mut tape, "d_zz_fake", routes.zz_fake, true);
    push(&mut tape, "d_xxzz_real", routes.xxzz_real, false);
    push(&mut tape, "d_xxzz_fake", routes.xxzz_fake, true);
    push(&mut tape, "sigma", routes.sigma, true);

    let term_value = |name: &'static str| -> Result<Option<f64>> {
        match nodes.iter().find(|(n, _)| *n == name) {
            Some(&(_, id)) => Ok(Some(finite_or(name, -tape.data(id)[0], step)?)),
            None => Ok(None),
        }
    };
    let d_xz_real = term_value("d_xz_real")?.expect("always enabled");
    let d_xz_fake = term_value("d_xz_fake")?.expect("always enabled");
    let d_xx_real = term_value("d_xx_real")?;
    let d_xx_fake = term_value("d_xx_fake")?;
    let d_zz_real = term_value("d_zz_real")?;
    let d_zz_fake = term_value("d_zz_fake")?;
    let d_xxzz_real = term_value("d_xxzz_real")?;
    let d_xxzz_fake = term_value("d_xxzz_fake")?;
    let sigma = term_value("sigma")?;

    // Total = -(sum of mean logs), built on the tape for the backward pass.
    let mut acc = nodes[0].1;
    for &(_, id) in &nodes[1..] {
        acc = tape.add(acc, id)?;
    }
    let d_total_node = tape.scale(acc, -1.0);
    let d_total = finite_or("d_total", tape.data(d_total_node)[0], step)?;

    // The generator/encoder loss over the same forward, read value-wise
    // from the fake-route probabilities.
    let fake_routes = [routes.xz_fake, routes.xx_fake, routes.zz_fake, routes.xxzz_fake, routes.sigma];
    let ge_total = {
        let mut acc = 0.0;
        for p in fake_routes.into_iter().flatten() {
            if cfg.saturating {
                acc += mean_log_value(&tape, p, true);
            } else {
                acc -= mean_log_value(&tape, p, false);
            }
        }
        finite_or("ge_total", acc, step)?
    };

    let breakdown = LossBreakdown {
        d_xz_real,
        d_xz_fake,
        d_xx_real,
        d_xx_fake,
        d_zz_real,
        d_zz_fake,
        d_xxzz_real,
        d_xxzz_fake,
        sigma,
        d_total,
        ge_total,
    };

    let grads = if want_grads {
        collect_grads(&tape, d_total_node, &param_ids)?
    } else {
        Vec::new()
    };
    Ok(DiscPassOut { breakdown, grads })
}

/// Builds the generator/encoder objective on a fresh tape and, on request,
/// its gradients with respect to the encoder and generator parameters.
pub(crate) fn generator_pass(
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    cfg: &TrainConfig,
    rngs: &mut DropoutRngs,
    update_stats: bool,
    want_grads: bool,
    step: u64,
) -> Result<(f64, Vec<(String, Vec<f64>)>)> {
    let toggles = cfg.toggles();
    let mut tape = Tape::new();
    let plan = PassPlan {
        d_trainable: false,
        eg_trainable: true,
        update_stats,
        sn_iters: cfg.sn_iters,
        want_real: false,
    };
    let (routes, param_ids) = build_routes(&mut tape, bundle, x, z, x_sig, toggles, rngs, plan)?;

    let named = [
        ("ge_d_xz", routes.xz_fake),
        ("ge_d_xx", routes.xx_fake),
        ("ge_d_zz", routes.zz_fake),
        ("ge_d_xxzz", routes.xxzz_fake),
        ("ge_sigma", routes.sigma),
    ];
    let mut terms: Vec<NodeId> = Vec::new();
    for (name, p) in named {
        if let Some(p) = p {
            let m = if cfg.saturating {
                mean_log1m(&mut tape, p)
            } else {
                mean_log(&mut tape, p)
            };
            finite_or(name, tape.data(m)[0], step)?;
            terms.push(m);
        }
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    // Non-saturating: minimize -sum(mean ln D). Saturating: minimize
    // +sum(mean ln (1 - D)).
    let root = if cfg.saturating { acc } else { tape.scale(acc, -1.0) };
    let ge_total = finite_or("ge_total", tape.data(root)[0], step)?;

    let grads = if want_grads {
        collect_grads(&tape, root, &param_ids)?
    } else {
        Vec::new()
    };
    Ok((ge_total, grads))
}

/// Runs the backward sweep and pairs each registered parameter with its
/// gradient. Parameters untouched by the objective get zero gradients.
fn collect_grads(
    tape: &Tape,
    root: NodeId,
    param_ids: &[(String, NodeId)],
) -> Result<Vec<(String, Vec<f64>)>> {
    let grads = tape.backward(root)?;
    let mut out = Vec::with_capacity(param_ids.len());
    for (name, id) in param_ids {
        let g = match grads.get(*id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.data(*id).len()],
        };
        out.push((name.clone(), g));
    }
    Ok(out)
}

/// Evaluates the discriminator objective without touching any model state.
///
/// Dropout masks are derived from `rng` by substream name, so two calls
/// with the same stream see identical masks; pass fresh substreams for
/// independent evaluations.
pub fn loss_discriminators(
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<LossBreakdown> {
    let mut rngs = DropoutRngs::derive(rng);
    let out = discriminator_pass(bundle, x, z, x_sig, cfg, &mut rngs, false, false, 0)?;
    Ok(out.breakdown)
}

/// Like [`loss_discriminators`], but also returns the gradient of the
/// discriminator loss for every discriminator parameter.
pub fn loss_discriminators_with_grads(
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(LossBreakdown, Vec<(String, Vec<f64>)>)> {
    let mut rngs = DropoutRngs::derive(rng);
    let out = discriminator_pass(bundle, x, z, x_sig, cfg, &mut rngs, false, true, 0)?;
    Ok((out.breakdown, out.grads))
}

/// Evaluates the generator/encoder objective without touching any model
/// state. See [`loss_discriminators`] for the dropout-mask contract.
pub fn loss_generator_encoder(
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<f64> {
    let mut rngs = DropoutRngs::derive(rng);
    let (v, _) = generator_pass(bundle, x, z, x_sig, cfg, &mut rngs, false, false, 0)?;
    Ok(v)
}

/// Like [`loss_generator_encoder`], but also returns the gradient for
/// every encoder and generator parameter.
pub fn loss_generator_encoder_with_grads(
    bundle: &mut ModelBundle,
    x: &Tensor,
    z: &Tensor,
    x_sig: Option<&Tensor>,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(f64, Vec<(String, Vec<f64>)>)> {
    let mut rngs = DropoutRngs::derive(rng);
    generator_pass(bundle, x, z, x_sig, cfg, &mut rngs, false, true, 0)
}
