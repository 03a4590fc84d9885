//! Central-difference verification of tape gradients.

use crate::error::{CoreError, Result};
use crate::params::ParamStore;

/// Worst observed disagreement between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with an absolute floor: tiny gradients (|a|,|b| below
/// `floor`) are compared on an absolute scale so roundoff near zero does
/// not blow up the ratio.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(floor))
}

/// Default denominator floor for [`rel_err`].
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Compare `analytic` gradients against central differences of `loss_fn`
/// around `store`, step `h`, checking every entry of every parameter
/// (or an evenly strided subset of at most `cap_per_param` entries).
///
/// `loss_fn` must be a pure function of the store: it is invoked twice per
/// checked entry with one entry nudged by +-h.
pub fn finite_diff_check<F>(
    store: &ParamStore<f64>,
    analytic: &ParamStore<f64>,
    mut loss_fn: F,
    h: f64,
    cap_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(CoreError::Contract {
            op: "finite_diff_check",
            detail: format!("step must be positive, got {h}"),
        });
    }
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let numel = store.get(name)?.numel();
        let grad = analytic.get(name)?;
        if grad.numel() != numel {
            return Err(CoreError::Contract {
                op: "finite_diff_check",
                detail: format!("gradient for {name} has wrong element count"),
            });
        }
        let stride = match cap_per_param {
            Some(cap) if cap > 0 && numel > cap => numel.div_ceil(cap),
            _ => 1,
        };
        let mut idx = 0;
        while idx < numel {
            let orig = store.get(name)?.data()[idx];
            work.get_mut(name)?.data_mut()[idx] = orig + h;
            let up = loss_fn(&work)?;
            work.get_mut(name)?.data_mut()[idx] = orig - h;
            let down = loss_fn(&work)?;
            work.get_mut(name)?.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(name)?.data()[idx];
            let e = rel_err(a, numeric, REL_ERR_FLOOR);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
            report.entries_checked += 1;
            idx += stride;
        }
    }
    Ok(report)
}
