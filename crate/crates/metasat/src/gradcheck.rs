//! Central finite-difference oracle for validating analytic gradients.
//!
//! Deliberately independent of the layer implementations: it only perturbs a
//! flat coordinate vector and re-evaluates a scalar objective.

/// Central finite difference of `f` at `point`, one coordinate at a time.
pub fn central_diff<F>(point: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Guarded relative error between two values; the guard keeps near-zero
/// gradients from blowing up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Largest guarded relative error across two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
