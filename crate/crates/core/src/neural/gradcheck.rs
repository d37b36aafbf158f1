use serde::Serialize;

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    /// Indices whose relative error exceeded the tolerance.
    pub failures: Vec<usize>,
    pub passed: bool,
}

/// Central-difference gradient check.
///
/// `model_fn` maps a flat parameter vector to `(loss, analytic_gradient)`; it
/// must be deterministic. The relative error at index `i` is
/// `|a - n| / max(|a|, |n|, 1e-6 * max(1, |loss|))`, the floor keeping
/// round-off in the difference quotient from dominating near-zero entries.
pub fn finite_difference_check<F>(mut model_fn: F, params: &[f64], step: f64, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (loss, analytic) = model_fn(params);
    assert_eq!(analytic.len(), params.len(), "analytic gradient length");
    let floor = 1e-6 * loss.abs().max(1.0);
    let mut work = params.to_vec();
    let mut max_err = 0.0f64;
    let mut worst = None;
    let mut failures = Vec::new();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = model_fn(&work).0;
        work[i] = orig - step;
        let minus = model_fn(&work).0;
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        let err = (analytic[i] - numeric).abs() / denom;
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > max_err || worst.is_none() {
            max_err = max_err.max(err);
            worst = Some(i);
        }
        if err >= tolerance {
            failures.push(i);
        }
    }
    GradCheckReport {
        checked: params.len(),
        max_relative_error: max_err,
        worst_index: worst,
        tolerance,
        passed: failures.is_empty(),
        failures,
    }
}
