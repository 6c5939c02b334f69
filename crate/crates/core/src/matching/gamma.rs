//! Price-scale estimation for the online matcher.
//!
//! The online algorithm needs `γ` to be a constant-factor approximation of
//! `OPT/k` before it sees any replica. The estimate is computed from an
//! *independent* redraw of the replica profile (same surrogates), with every
//! edge mean estimated from `N` samples and the offline program solved on
//! the empirical matrix; `γ = (4/k)·OPT(v̂)`. Because the redraw never looks
//! at the live report, using the estimate preserves incentives.

use crate::error::Error;
use crate::matching::instance::MatchingInstance;
use crate::matching::offline::solve_offline;
use crate::matching::Mat;
use crate::rng::Session;
use crate::Result;

/// Price-scale estimate plus diagnostics.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub gamma: f64,
    /// Offline optimum of the empirical matrix.
    pub opt_hat: f64,
    /// Edge samples drawn per edge.
    pub samples_per_edge: u64,
}

/// Samples per edge required by the estimation guarantee:
/// `2·ln(4 m² k / η) / (δ² ln² m)`. Infinite for `m = 1`.
pub fn required_samples_per_edge(m: usize, k: usize, delta: f64, eta: f64) -> f64 {
    let ln_m = (m as f64).ln();
    2.0 * (4.0 * (m * m * k) as f64 / eta).ln() / (delta * delta * ln_m * ln_m)
}

/// Load required by the estimation guarantee:
/// `32·ln(8/η) / (δ² m ln² m)`. Infinite for `m = 1`.
pub fn required_load(m: usize, delta: f64, eta: f64) -> f64 {
    let ln_m = (m as f64).ln();
    32.0 * (8.0 / eta).ln() / (delta * delta * m as f64 * ln_m * ln_m)
}

/// Estimate `γ` for an instance. With `samples_override = None` the
/// theorem-scale sample counts and load preconditions are enforced;
/// desk-scale runs may override the per-edge sample count, keeping the
/// estimator's structure (independent redraw, empirical means, offline
/// solve) while relaxing the concentration constants.
pub fn estimate_gamma(
    instance: &MatchingInstance,
    delta: f64,
    eta: f64,
    samples_override: Option<u64>,
    s: &mut Session,
) -> Result<GammaEstimate> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("eta {eta} outside (0,1)")));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "regularizer {delta} must be positive"
        )));
    }
    let m = instance.m();
    let k = instance.k();
    let n = match samples_override {
        Some(n) if n >= 1 => n,
        Some(_) => {
            return Err(Error::InvalidParameter(
                "sample override must be at least 1".into(),
            ))
        }
        None => {
            let need_n = required_samples_per_edge(m, k, delta, eta);
            let need_k = required_load(m, delta, eta);
            if !need_n.is_finite() || !need_k.is_finite() {
                return Err(Error::InvalidParameter(
                    "estimation bounds are undefined for m = 1; pass a sample override".into(),
                ));
            }
            if (k as f64) < need_k {
                return Err(Error::InvalidParameter(format!(
                    "load k={k} below the estimation requirement {need_k:.1}; \
                     pass a sample override for desk-scale runs"
                )));
            }
            need_n.ceil() as u64
        }
    };

    let fresh = instance.redraw_replicas(s)?;
    let rows = fresh.rows();
    let mut means = Mat::zeros(rows, m);
    for i in 0..rows {
        for j in 0..m {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += fresh.sample_edge(i, j, s)?;
            }
            means.set(i, j, sum / n as f64);
        }
    }
    let sol = solve_offline(&means, delta, k)?;
    Ok(GammaEstimate {
        gamma: 4.0 * sol.opt / k as f64,
        opt_hat: sol.opt,
        samples_per_edge: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSeed, SampleBudget, SourceRegistry, Stream};

    #[test]
    fn deterministic_edges_have_closed_form_gamma() {
        // all edges worth c with certainty: OPT = km·c + δ·km·ln m,
        // so γ = 4m(c + δ ln m) exactly.
        let (m, k, c, delta) = (3usize, 2usize, 0.5f64, 0.1f64);
        let mut reg = SourceRegistry::new();
        // Bernoulli edge values are deterministic only at 0/1; use mean 1.0
        // on one column and c on the others via a point test with c = 1? No:
        // build the means matrix directly with c and rely on Bernoulli noise
        // vanishing at c ∈ {0,1}. For the closed-form case take c = 1.
        let ones = Mat::from_rows(vec![vec![1.0; m]; k * m]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, ones, k).unwrap();
        let mut s = Session::new(Stream::root(RandomSeed(1)), SampleBudget::UNLIMITED);
        let est = estimate_gamma(&inst, delta, 0.1, Some(3), &mut s).unwrap();
        let want = 4.0 * m as f64 * (1.0 + delta * (m as f64).ln());
        assert!(
            (est.gamma - want).abs() < 1e-6,
            "gamma {} vs {want}",
            est.gamma
        );
        let _ = c;
    }

    #[test]
    fn single_surrogate_needs_override() {
        let mut reg = SourceRegistry::new();
        let means = Mat::from_rows(vec![vec![0.5], vec![0.7]]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, means, 2).unwrap();
        let mut s = Session::new(Stream::root(RandomSeed(2)), SampleBudget::UNLIMITED);
        assert!(estimate_gamma(&inst, 0.1, 0.1, None, &mut s).is_err());
        let est = estimate_gamma(&inst, 0.1, 0.1, Some(200), &mut s).unwrap();
        // OPT ≈ 0.5 + 0.7 with zero entropy, so γ ≈ 4·1.2/2
        assert!((est.gamma - 2.4).abs() < 0.3, "gamma {}", est.gamma);
    }

    #[test]
    fn theorem_scale_precondition_enforced() {
        let mut reg = SourceRegistry::new();
        let means = Mat::from_rows(vec![vec![0.5, 0.5]; 4]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, means, 2).unwrap();
        let mut s = Session::new(Stream::root(RandomSeed(3)), SampleBudget::UNLIMITED);
        // k = 2 is far below the theorem-scale load for these parameters
        assert!(matches!(
            estimate_gamma(&inst, 0.2, 0.1, None, &mut s),
            Err(Error::InvalidParameter(_))
        ));
    }
}
