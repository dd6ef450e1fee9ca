//! Central finite-difference gradient checking.
//!
//! Used by the test suites as an oracle that only ever evaluates the forward
//! pass, so it stays independent of the backward implementation it checks.

/// Central difference gradient of `f` at `x` with step `h`.
pub fn central_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let up = f(&buf);
        buf[i] = orig - h;
        let down = f(&buf);
        buf[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Relative error with the guarded denominator max(1e-8, |a| + |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1e-8f64).max(a.abs() + b.abs())
}

/// Largest relative error between an analytic gradient and its
/// finite-difference estimate.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
