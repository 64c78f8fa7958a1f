//! Central finite-difference gradient checking.
//!
//! Used by unit tests and the acceptance suite; it only evaluates forward
//! values and never consults backward rules.

use super::graph::{Bound, Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

/// Denominator floor for relative error, so gradients that vanish
/// identically are compared on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter index and element offset of the worst entry.
    pub worst: (usize, usize),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of a scalar loss with central differences.
///
/// `loss` builds a fresh graph from the parameters, returning it with the
/// scalar loss node and the parameter binding. When `max_per_param` is set,
/// at most that many evenly spaced entries per tensor are perturbed.
pub fn check<F>(
    params: &ParamStore,
    step: f64,
    max_per_param: Option<usize>,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var, Bound)>,
{
    let (g, out, bound) = loss(params)?;
    let grads = g.backward_scalar(out)?.for_params(params, &bound);

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    for (pi, grad) in grads.iter().enumerate() {
        let n = grad.len();
        let stride = match max_per_param {
            Some(k) if k < n => n.div_ceil(k),
            _ => 1,
        };
        for off in (0..n).step_by(stride) {
            let orig = work.values()[pi].data()[off];
            work.values_mut()[pi].data_mut()[off] = orig + step;
            let plus = eval(&loss, &work)?;
            work.values_mut()[pi].data_mut()[off] = orig - step;
            let minus = eval(&loss, &work)?;
            work.values_mut()[pi].data_mut()[off] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(grad.data()[off], numeric);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, off);
            }
        }
    }
    Ok(report)
}

fn eval<F>(loss: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var, Bound)>,
{
    let (g, out, _) = loss(params)?;
    Ok(g.value(out).item())
}
