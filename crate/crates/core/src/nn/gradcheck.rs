//! Central finite-difference gradient checking.
//!
//! The harness perturbs each checked parameter element by ±h, re-evaluates a
//! scalar loss, and compares `(L+ - L-) / 2h` against the analytic gradient
//! accumulated by a backward pass. The error measure is
//! `|a - n| / max(|a|, |n|, floor)`: gradients above the floor are held to a
//! true relative bound, while sub-floor gradients are held to the equivalent
//! absolute bound (floor x tolerance), which keeps exact-zero gradients
//! (e.g. a conv bias under train-mode batch norm) from dividing by noise.

use super::{ParamId, ParamStore};

pub const GRADCHECK_H: f64 = 1e-4;
pub const GRADCHECK_REL_TOL: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.elements_checked += other.elements_checked;
    }

    pub fn passes(&self) -> bool {
        self.elements_checked > 0 && self.max_rel_error < GRADCHECK_REL_TOL
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks the analytic gradients of `params` against central finite
/// differences of `loss`.
///
/// `accumulate` must zero the store's gradients, run one forward/backward of
/// the same computation `loss` evaluates, and leave gradients populated.
/// Both closures must be deterministic functions of the store (fixed RNG
/// seeds, fixed data).
pub fn check_gradients(
    store: &mut ParamStore,
    params: &[ParamId],
    mut loss: impl FnMut(&mut ParamStore) -> f64,
    mut accumulate: impl FnMut(&mut ParamStore),
) -> GradCheckReport {
    accumulate(store);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| {
            store
                .get(id)
                .tensor
                .grad()
                .expect("accumulate must populate gradients")
                .to_vec()
        })
        .collect();

    let mut report = GradCheckReport::default();
    for (pi, &id) in params.iter().enumerate() {
        let n = store.get(id).tensor.len();
        for i in 0..n {
            let orig = store.get(id).data()[i];
            store.get_mut(id).tensor.data_mut()[i] = orig + GRADCHECK_H;
            let plus = loss(store);
            store.get_mut(id).tensor.data_mut()[i] = orig - GRADCHECK_H;
            let minus = loss(store);
            store.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * GRADCHECK_H);
            let err = rel_error(analytic[pi][i], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.elements_checked += 1;
        }
    }
    report
}
