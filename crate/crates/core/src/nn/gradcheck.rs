use alloc::format;
use alloc::string::String;

use super::graph::{Graph, NodeId};
use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub checked: usize,
}

fn eval<F>(params: &ParameterStore, loss_fn: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check loss".into(),
        });
    }
    Ok(v)
}

/// Compares reverse-mode gradients against central differences for every
/// scalar of every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(params: &mut ParameterStore, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        if !g.scalar(loss).is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check loss".into(),
            });
        }
        g.backward(loss)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let ids: alloc::vec::Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        for i in 0..n {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(params, &loss_fn);
            params.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(params, &loss_fn);
            params.value_mut(id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{}]", params.name(id), i);
            }
        }
    }
    Ok(report)
}
