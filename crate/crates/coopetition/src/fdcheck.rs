//! Central finite-difference gradient verification. The checker only
//! evaluates a black-box loss, so it stays independent of the backward pass
//! it is used to validate.

/// Central finite differences of `loss` w.r.t. `x`, step `h` per coordinate.
pub fn central_diff(loss: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss(&probe);
        probe[i] = orig - h;
        let down = loss(&probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Norm-based relative error between an analytic gradient and a reference.
/// Zero/zero compares as 0.
pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches() {
        let mut loss = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = vec![1.0, -2.0, 0.5];
        let fd = central_diff(&mut loss, &x, 1e-5);
        let analytic = vec![2.0, -4.0, 1.0];
        assert!(relative_error(&analytic, &fd) < 1e-10);
    }

    #[test]
    fn zero_gradients_compare_clean() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }
}
