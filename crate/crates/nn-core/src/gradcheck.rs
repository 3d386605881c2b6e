//! Central-difference gradient verification.
//!
//! The model fragment under test is a closure from a parameter vector to a
//! scalar loss plus its analytic gradients. Each parameter component is
//! perturbed by ±step and the resulting finite difference is compared against
//! the analytic value at relative tolerance
//! `|analytic - numeric| / max(1, |analytic|)`.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub total: usize,
    pub tolerance: f64,
    pub step: f64,
    /// Entries exceeding tolerance, worst first.
    pub failures: Vec<GradCheckEntry>,
    /// Largest relative error observed, even when passing.
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Evaluates loss and analytic gradients at a parameter setting.
pub trait LossFragment {
    fn loss(&mut self, params: &[(String, Tensor)]) -> f64;
    fn loss_and_grads(&mut self, params: &[(String, Tensor)]) -> (f64, HashMap<String, Tensor>);
}

impl<F> LossFragment for F
where
    F: FnMut(&[(String, Tensor)], bool) -> (f64, Option<HashMap<String, Tensor>>),
{
    fn loss(&mut self, params: &[(String, Tensor)]) -> f64 {
        self(params, false).0
    }
    fn loss_and_grads(&mut self, params: &[(String, Tensor)]) -> (f64, HashMap<String, Tensor>) {
        let (l, g) = self(params, true);
        (l, g.expect("gradients requested"))
    }
}

pub fn gradcheck(
    fragment: &mut dyn LossFragment,
    params: &[(String, Tensor)],
    tolerance: f64,
    step: f64,
) -> GradCheckReport {
    let (_, analytic) = fragment.loss_and_grads(params);
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut failures = Vec::new();
    let mut worst: Option<GradCheckEntry> = None;
    let mut total = 0;
    for pi in 0..work.len() {
        let name = work[pi].0.clone();
        let n = work[pi].1.len();
        for ci in 0..n {
            total += 1;
            let orig = work[pi].1.data()[ci];
            work[pi].1.data_mut()[ci] = orig + step;
            let up = fragment.loss(&work);
            work[pi].1.data_mut()[ci] = orig - step;
            let down = fragment.loss(&work);
            work[pi].1.data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic
                .get(&name)
                .map(|t| t.data()[ci])
                .unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            let entry = GradCheckEntry {
                param: name.clone(),
                component: ci,
                analytic: a,
                numeric,
                rel_error: rel,
            };
            if worst.as_ref().map_or(true, |w| rel > w.rel_error) {
                worst = Some(entry.clone());
            }
            if rel > tolerance {
                failures.push(entry);
            }
        }
    }
    failures.sort_by(|a, b| b.rel_error.partial_cmp(&a.rel_error).unwrap());
    GradCheckReport {
        total,
        tolerance,
        step,
        failures,
        worst,
    }
}

/// Like [`gradcheck`] but converts a failing report into an error carrying the
/// worst offender's parameter path and both gradient values.
pub fn gradcheck_strict(
    fragment: &mut dyn LossFragment,
    params: &[(String, Tensor)],
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let report = gradcheck(fragment, params, tolerance, step);
    if report.passed() {
        return Ok(report);
    }
    let worst = &report.failures[0];
    Err(NnError::GradCheckFailed {
        failures: report.failures.len(),
        total: report.total,
        tolerance,
        worst_param: worst.param.clone(),
        analytic: worst.analytic,
        numeric: worst.numeric,
        rel: worst.rel_error,
    })
}
