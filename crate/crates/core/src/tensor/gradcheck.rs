//! Central finite-difference comparison for parameter gradients.

use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare backward gradients of `loss_fn` against central differences with
/// step `h`, on up to `per_param` randomly chosen entries of every parameter.
/// `loss_fn` must be a deterministic function of the parameter values.
pub fn check_param_grads<F>(store: &mut ParamStore, mut loss_fn: F, h: f64, per_param: usize, rng: &mut Rng) -> Result<GradCheck>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    store.zero_grad();
    let (mut g, loss) = loss_fn(store)?;
    g.backward(loss, store)?;
    let mut report = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let entries: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..n)).collect()
        };
        for k in entries {
            let analytic = store.grad(id).map_or(0.0, |t| t.data()[k]);
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + h;
            let (gp, lp) = loss_fn(store)?;
            let fp = gp.value(lp).item();
            store.value_mut(id).data_mut()[k] = orig - h;
            let (gm, lm) = loss_fn(store)?;
            let fm = gm.value(lm).item();
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((store.name(id).to_string(), k, analytic, numeric));
                }
            }
        }
    }
    Ok(report)
}
