//! Central finite-difference checks of analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

/// Central-difference step. Rounding error stays near `ε·|f|/h`, far below
/// test tolerances, and few ReLU kinks fall inside so narrow a stencil.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative error, so gradients that are zero up to
/// finite-difference noise do not blow the ratio up.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `builder`'s scalar output with respect
/// to every value in `store` against central differences.
///
/// `builder` must be deterministic: it is re-run twice per checked entry.
pub fn grad_check<F>(store: &mut ParamStore, builder: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.clear_grads();
    let mut g = Graph::new();
    let loss = builder(&mut g, store)?;
    let grads = g.backward(loss)?;
    g.write_param_grads(&grads, store);
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            let t = store.get(id);
            t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    store.clear_grads();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = builder(&mut g, store)?;
        Ok(g.scalar(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
    };
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + FD_STEP;
            let up = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig - FD_STEP;
            let down = eval(store)?;
            store.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[k][i], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
