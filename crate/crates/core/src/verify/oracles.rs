//! Closed-form target distributions used to check the samplers.

use crate::error::Error;
use crate::Result;

/// Probability vector `v_i / Σ_j v_j`.
pub fn exact_linear_weights(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if v.iter().any(|x| *x < 0.0) {
        return Err(Error::InvalidInput("negative weight".into()));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("all weights are zero".into()));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

/// Probability vector `e^{λ v_i} / Σ_j e^{λ v_j}`, computed shift-stably by
/// subtracting the maximum weight first. Invariant under `v → v + c·1`.
pub fn exact_exp_weights(v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be finite".into()));
    }
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = v.iter().map(|x| (lambda * (x - vmax)).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_weights_examples() {
        assert_eq!(exact_linear_weights(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(exact_linear_weights(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        let p = exact_linear_weights(&[0.2, 0.6]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!(exact_linear_weights(&[0.0, 0.0]).is_err());
        assert!(exact_linear_weights(&[]).is_err());
    }

    #[test]
    fn exp_weights_examples() {
        let uniform = exact_exp_weights(&[0.3, 0.9, 0.5], 0.0).unwrap();
        for p in &uniform {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = exact_exp_weights(&[0.0, 1.0], 3.0f64.ln()).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let a = exact_exp_weights(&[0.2, 0.8], 5.0).unwrap();
        let b = exact_exp_weights(&[1.2, 1.8], 5.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn agrees_with_brute_force() {
        // brute-force normalization without the max-subtraction trick
        let v = [0.11f64, 0.47, 0.92, 0.3];
        let lambda = 2.5f64;
        let brute: Vec<f64> = {
            let w: Vec<f64> = v.iter().map(|x| (lambda * x).exp()).collect();
            let t: f64 = w.iter().sum();
            w.iter().map(|x| x / t).collect()
        };
        let stable = exact_exp_weights(&v, lambda).unwrap();
        for (a, b) in brute.iter().zip(&stable) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
