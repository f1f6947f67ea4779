//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradError {
    pub name: String,
    /// `max_i |analytic_i - numeric_i| / max_i |numeric_i|` over the tensor.
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamGradError>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar built by `build` with
/// central differences of step `h`, for every entry of every parameter.
///
/// Relative error is normalized by the largest numeric gradient magnitude
/// of the parameter tensor (floored at 1e-10) so near-zero entries do not
/// dominate.
pub fn finite_diff_check<F>(
    store: &mut ParamStore<f64>,
    build: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, store)?;
        Ok(g.value(l).item())
    };

    let mut params = Vec::with_capacity(store.len());
    for pi in 0..store.len() {
        let n = store.iter().nth(pi).map(|p| p.value.len()).unwrap_or(0);
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let id = crate::param::ParamId(pi);
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-10);
        let max_abs = analytic[pi]
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        params.push(ParamGradError {
            name: store.iter().nth(pi).unwrap().name.clone(),
            max_rel_error: max_abs / scale,
        });
    }
    store.zero_grad();
    let passed = params.iter().all(|p| p.max_rel_error <= tolerance);
    Ok(GradCheckReport {
        params,
        tolerance,
        passed,
    })
}
