//! Numerical gradient checking against central finite differences.
//!
//! `finite_difference` knows nothing about the tape: it evaluates an
//! arbitrary closure, so it can falsify the analytic backward pass rather
//! than restate it.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Elementwise closeness test suited to gradients: relative error where the
/// magnitudes are meaningful, absolute error near zero (central differences
/// bottom out around 1e-10 there, so pure relative error would be noise).
pub fn grads_close(analytic: &[f64], numeric: &[f64], rel_tol: f64) -> bool {
    max_grad_error(analytic, numeric) <= rel_tol
}

/// Largest elementwise discrepancy under the `grads_close` metric.
pub fn max_grad_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = if scale > 1e-6 { (a - n).abs() / scale } else { (a - n).abs() };
        worst = worst.max(err);
    }
    worst
}
