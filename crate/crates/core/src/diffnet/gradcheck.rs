//! Finite-difference verification of tape gradients using the fourth-order
//! central stencil `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.

use crate::diffnet::params::{ParamId, ParamStore};
use crate::diffnet::tape::{NodeId, Tape};
use crate::error::Result;

/// Comparison for a single parameter entry.
#[derive(Clone, Debug)]
pub struct FdEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub tol_rel: f64,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Entries whose relative error exceeds the tolerance.
    pub failures: Vec<FdEntry>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Magnitude below which gradient entries are compared absolutely; the
/// stencil's rounding error sits several orders below it.
pub const REL_FLOOR: f64 = 1e-6;

/// Relative error `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Stencil step: rounding stays near `1e-11·|f|`, the `O(h⁴)` truncation
/// term is negligible, and the probe rarely straddles a relu kink.
pub const FD_STEP: f64 = 1e-5;

/// Compares the tape gradient of `model` against central differences for
/// every entry of `params` (all parameters when `None`).
///
/// `model` must build a fresh tape from the store's current values and
/// return the scalar loss node; it must be deterministic.
pub fn finite_diff_check<F>(
    model: F,
    store: &mut ParamStore,
    params: Option<&[ParamId]>,
    tol_rel: f64,
) -> Result<FdReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, NodeId)>,
{
    let (tape, loss) = model(store)?;
    let grads = tape.gradients(loss, store)?;
    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => store.ids().collect(),
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let (t, l) = model(s)?;
        Ok(t.scalar(l))
    };

    let mut report = FdReport {
        tol_rel,
        ..FdReport::default()
    };
    for id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id)[i];
            let mut at = |k: f64| -> Result<f64> {
                store.value_mut(id)[i] = orig + k * FD_STEP;
                eval(store)
            };
            let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            store.value_mut(id)[i] = orig;
            let numeric = (-p2? + 8.0 * p1? - 8.0 * m1? + m2?) / (12.0 * FD_STEP);
            let analytic = grads.get(id).map_or(0.0, |g| g[i]);
            let rel_err = relative_error(analytic, numeric);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if rel_err > tol_rel || !rel_err.is_finite() {
                report.failures.push(FdEntry {
                    param: store.name(id).to_string(),
                    index: i,
                    analytic,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}
