//! Central finite-difference verification of tape gradients.
//!
//! For each parameter coordinate the checker compares the analytic gradient
//! against `(f(x + eps) - f(x - eps)) / (2 eps)` and reports the relative
//! error `|a - n| / max(|a|, 1e-8)`.
//!
//! Central differences at step `1e-4` carry cancellation noise of roughly
//! `ulp(f) / eps`, about `1e-11` for losses of order one. Coordinates where
//! both the analytic and numeric values sit below [`FD_RESOLUTION`] are
//! therefore below what the method can measure; they are tallied separately
//! (and still required to agree in absolute terms) rather than allowed to
//! trip the relative test on rounding noise.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this are unresolvable by `f64` central differences
/// at the step sizes the suite uses.
pub const FD_RESOLUTION: f64 = 1e-10;

/// Worst coordinate seen during a check.
#[derive(Clone, Copy, Debug)]
pub struct WorstCoord {
    /// Index of the parameter tensor.
    pub param: usize,
    /// Flat coordinate within it.
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of one gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over resolvable coordinates.
    pub max_rel_err: f64,
    /// Coordinates compared with the relative criterion.
    pub resolvable: usize,
    /// Coordinates below the finite-difference resolution floor.
    pub unresolvable: usize,
    pub worst: Option<WorstCoord>,
}

/// Checks analytic gradients of `f` against central differences at `params`.
///
/// `f(params, want_grads)` returns the scalar value and, when asked, one
/// gradient buffer per parameter tensor (aligned with `params`). The closure
/// must be deterministic: any internal randomness has to be frozen before
/// the check.
pub fn grad_check(
    f: &mut dyn FnMut(&[Tensor], bool) -> Result<(f64, Vec<Vec<f64>>)>,
    params: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::Invalid(format!("grad_check step {eps} must be positive")));
    }
    let (_, grads) = f(params, true)?;
    if grads.len() != params.len() {
        return Err(Error::Invalid(format!(
            "grad_check closure returned {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        resolvable: 0,
        unresolvable: 0,
        worst: None,
    };
    for (pi, g) in grads.iter().enumerate() {
        if g.len() != params[pi].numel() {
            return Err(Error::Invalid(format!(
                "gradient {} has {} entries for a parameter with {}",
                pi,
                g.len(),
                params[pi].numel()
            )));
        }
        for ci in 0..g.len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let (fp, _) = f(&work, false)?;
            work[pi].data_mut()[ci] = orig - eps;
            let (fm, _) = f(&work, false)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = g[ci];
            if analytic.abs() < FD_RESOLUTION && numeric.abs() < FD_RESOLUTION {
                report.unresolvable += 1;
                continue;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(1e-8);
            report.resolvable += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some(WorstCoord {
                    param: pi,
                    coord: ci,
                    analytic,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}
