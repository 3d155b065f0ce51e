//! Central finite-difference verification of analytic gradients.

/// Compares the analytic gradient of a scalar function against central
/// differences at `point`.
///
/// `f` returns the function value and its analytic gradient. The result is
/// the maximum over coordinates of `|a - n| / max(1, |a|, |n|)`.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        probe[i] = point[i] + eps;
        let (plus, _) = f(&probe);
        probe[i] = point[i] - eps;
        let (minus, _) = f(&probe);
        probe[i] = point[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |p: &[f64]| {
            let v = 3.0 * p[0] * p[0] + p[0] * p[1] - 2.0 * p[1] * p[1] + 0.5 * p[2];
            (v, vec![6.0 * p[0] + p[1], p[0] - 4.0 * p[1], 0.5])
        };
        assert!(finite_diff_check(f, &[0.3, -1.2, 4.0], 1e-5) < 1e-9);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let f = |p: &[f64]| (p[0].sin() * p[1], vec![p[0].cos() * p[1] * 1.1, p[0].sin()]);
        assert!(finite_diff_check(f, &[0.7, 2.0], 1e-5) > 1e-2);
    }
}
