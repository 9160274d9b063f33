//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numeric side only ever reads forward values, so it stays independent
//! of every backward rule it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of one [`check_gradients`] run.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps gradients that are
/// exactly zero on both sides from producing 0/0.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor used by [`check_gradients`].
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares backward gradients of `loss_fn` against central differences
/// for every element of every parameter.
pub fn check_gradients<F>(params: &[(String, Tensor<f64>)], step: f64, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[(String, Tensor<f64>)]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values.iter().map(|(n, t)| g.param(n.clone(), t.clone())).collect::<Result<Vec<_>>>()?;
        let loss = loss_fn(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let vars = params.iter().map(|(n, t)| g.param(n.clone(), t.clone())).collect::<Result<Vec<_>>>()?;
    let loss = loss_fn(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheck { max_relative_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut work = params.to_vec();
    for p in 0..params.len() {
        let analytic = grads.get(&params[p].0).expect("registered parameter").clone();
        for i in 0..params[p].1.len() {
            let orig = params[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[p].1.data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[p].1.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric, RELATIVE_FLOOR);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params[p].0.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
