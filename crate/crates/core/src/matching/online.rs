//! Online primal-dual matcher.
//!
//! Replicas arrive one at a time. For each, the current surrogate loads set
//! dual prices by exponential weights over the still-available surrogates
//! (weights `η·k_j`), and the replica is matched to a surrogate drawn from
//! the exponential weights distribution `∝ exp((v_{i,j} − γ·α_j)/δ)` — sampled
//! *exactly* from edge-value coins through the races. The run always ends in
//! a perfect k-to-1 matching, which is what keeps the surrogate-selection
//! rule stationary.

use crate::error::Error;
use crate::factory::CoinExpr;
use crate::matching::instance::{EdgeSource, MatchingInstance};
use crate::races;
use crate::rng::Session;
use crate::verify::oracles::exact_exp_weights;
use crate::Result;

/// Knobs of the online matcher: regularizer scale, dual learning rate,
/// price scale.
#[derive(Debug, Clone, Copy)]
pub struct OnlineParams {
    pub delta: f64,
    pub eta: f64,
    pub gamma: f64,
}

impl OnlineParams {
    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "regularizer {} must be positive",
                self.delta
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} outside (0,1)",
                self.eta
            )));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "price scale {} must be non-negative",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Dual price vector for the current loads: exponential weights with weights
/// `η·k_j` over available surrogates, zero elsewhere.
pub fn step_duals(loads: &[u32], available: &[usize], eta: f64) -> Result<Vec<f64>> {
    if available.is_empty() {
        return Err(Error::InvariantViolation(
            "no available surrogate (cannot happen before km assignments)".into(),
        ));
    }
    let weights: Vec<f64> = available.iter().map(|j| eta * f64::from(loads[*j])).collect();
    let probs = exact_exp_weights(&weights, 1.0)?;
    let mut alpha = vec![0.0; loads.len()];
    for (slot, j) in available.iter().enumerate() {
        alpha[*j] = probs[slot];
    }
    Ok(alpha)
}

/// Match one replica to an available surrogate with probabilities exactly
/// `∝ exp((v_{i,j} − γ·α_j)/δ)` over `available`.
///
/// Utilities `v_{i,j} − γ·α_j` live in `[−h, 1]` for `h = γ` (prices are a
/// sub-probability vector scaled by γ), so each one is normalized to `[0,1]`
/// by adding `h` and scaling by `1/(h+1)`. Since the price shift is a known
/// constant per surrogate, the normalized utility coin is an exact affine
/// mixture of the edge-value coin with weight `1/(h+1)` and shift
/// `(h − γα_j)/(h+1)` — the coefficients always sum below one. The race rate
/// becomes `(h+1)/δ`, which corrects the scaling; the additive shift cancels
/// by shift invariance.
pub fn match_replica(
    instance: &MatchingInstance,
    i: usize,
    alpha: &[f64],
    available: &[usize],
    params: &OnlineParams,
    s: &mut Session,
) -> Result<usize> {
    params.validate()?;
    if available.is_empty() {
        return Err(Error::InvariantViolation("empty availability set".into()));
    }
    if available.len() == 1 {
        return Ok(available[0]);
    }
    let h = params.gamma;
    let edges: Vec<EdgeSource> = available
        .iter()
        .map(|j| EdgeSource {
            instance,
            i,
            j: *j,
        })
        .collect();

    let lambda_race = (h + 1.0) / params.delta;
    let coins: Vec<CoinExpr> = if h == 0.0 {
        // No prices: the utilities are the raw edge values.
        edges.iter().map(|e| Ok(CoinExpr::from_values(e))).collect::<Result<_>>()?
    } else {
        edges
            .iter()
            .zip(available)
            .map(|(e, j)| {
                let shift = (h - h * alpha[*j]) / (h + 1.0);
                CoinExpr::affine(1.0 / (h + 1.0), shift, CoinExpr::from_values(e))
            })
            .collect::<Result<_>>()?
    };

    let result = if lambda_race > 4.0 {
        races::fast_exp_race(&coins, lambda_race, s)?
    } else {
        races::basic_exp_race(&coins, lambda_race, s)?
    };
    Ok(available[result.winner])
}

/// Run the full online matcher; returns the surrogate assigned to each
/// replica, in arrival order. Always a perfect k-to-1 matching.
pub fn online_regularized_match(
    instance: &MatchingInstance,
    params: &OnlineParams,
    s: &mut Session,
) -> Result<Vec<usize>> {
    params.validate()?;
    let m = instance.m();
    let k = instance.k() as u32;
    let mut loads = vec![0u32; m];
    let mut assignment = Vec::with_capacity(instance.rows());
    for i in 0..instance.rows() {
        let available: Vec<usize> = (0..m).filter(|j| loads[*j] < k).collect();
        let alpha = step_duals(&loads, &available, params.eta)?;
        let j = match_replica(instance, i, &alpha, &available, params, s)?;
        loads[j] += 1;
        assignment.push(j);
    }
    if loads.iter().any(|l| *l != k) {
        return Err(Error::InvariantViolation(
            "online matcher finished without a perfect k-to-1 matching".into(),
        ));
    }
    Ok(assignment)
}

/// Replay an assignment sequence and recover, for each step, the price
/// vector and the exact conditional marginals the matcher sampled from
/// (computed from true means). Verification only.
pub fn replay_marginals(
    means: &crate::matching::Mat,
    assignment: &[usize],
    k: usize,
    params: &OnlineParams,
) -> Result<Vec<Vec<f64>>> {
    let m = means.cols();
    let mut loads = vec![0u32; m];
    let mut out = Vec::with_capacity(assignment.len());
    for (i, chosen) in assignment.iter().enumerate() {
        let available: Vec<usize> = (0..m).filter(|j| loads[*j] < k as u32).collect();
        let alpha = step_duals(&loads, &available, params.eta)?;
        let utilities: Vec<f64> = available
            .iter()
            .map(|j| means.get(i, *j) - params.gamma * alpha[*j])
            .collect();
        let probs = exact_exp_weights(&utilities, 1.0 / params.delta)?;
        let mut full = vec![0.0; m];
        for (slot, j) in available.iter().enumerate() {
            full[*j] = probs[slot];
        }
        out.push(full);
        loads[*chosen] += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Mat;
    use crate::rng::{RandomSeed, SampleBudget, SourceRegistry, Stream};
    use crate::verify::stats::chi_square_check;

    #[test]
    fn duals_on_fresh_loads_are_uniform() {
        let alpha = step_duals(&[0, 0, 0], &[0, 1, 2], 0.5).unwrap();
        for a in &alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duals_follow_load_weights() {
        let alpha = step_duals(&[3, 0], &[0, 1], 0.5).unwrap();
        let e15 = 1.5f64.exp();
        assert!((alpha[0] - e15 / (e15 + 1.0)).abs() < 1e-12);
        assert!((alpha[1] - 1.0 / (e15 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn unavailable_surrogates_get_zero_price() {
        let alpha = step_duals(&[1, 2, 0], &[1, 2], 0.3).unwrap();
        assert_eq!(alpha[0], 0.0);
        assert!(alpha[1] > 0.0 && alpha[2] > 0.0);
    }

    #[test]
    fn empty_availability_is_an_invariant_violation() {
        assert!(matches!(
            step_duals(&[1, 1], &[], 0.3),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn match_replica_samples_priced_exponential_weights() {
        let mut reg = SourceRegistry::new();
        let means = Mat::from_rows(vec![vec![0.6, 0.4]; 2]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, means, 1).unwrap();
        let params = OnlineParams {
            delta: 0.2,
            eta: 0.25,
            gamma: 0.4,
        };
        let alpha = vec![0.5, 0.5];
        // weights ∝ exp((0.6−0.2)/0.2), exp((0.4−0.2)/0.2) = (e², e¹)
        let e = 1.0f64.exp();
        let target = [e / (1.0 + e), 1.0 / (1.0 + e)];
        let root = Stream::root(RandomSeed(60));
        let mut counts = [0u64; 2];
        let trials = 30_000u64;
        for t in 0..trials {
            let mut s = Session::new(root.derive_indexed("mr", t), SampleBudget::UNLIMITED);
            let j = match_replica(&inst, 0, &alpha, &[0, 1], &params, &mut s).unwrap();
            counts[j] += 1;
        }
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn single_available_surrogate_short_circuits() {
        let mut reg = SourceRegistry::new();
        let means = Mat::from_rows(vec![vec![0.5, 0.5]; 2]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, means, 1).unwrap();
        let params = OnlineParams {
            delta: 0.2,
            eta: 0.25,
            gamma: 0.0,
        };
        let mut s = Session::from_seed(RandomSeed(0));
        let j = match_replica(&inst, 0, &[0.0, 0.0], &[1], &params, &mut s).unwrap();
        assert_eq!(j, 1);
        assert_eq!(s.ledger.total(), 0);
    }

    #[test]
    fn online_match_is_always_perfect() {
        let mut reg = SourceRegistry::new();
        let means = Mat::from_rows(vec![vec![1.0, 0.0]; 2]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, means, 1).unwrap();
        let params = OnlineParams {
            delta: 0.3,
            eta: 0.25,
            gamma: 0.5,
        };
        let root = Stream::root(RandomSeed(61));
        let mut first_gets_best = 0u64;
        for t in 0..200u64 {
            let mut s = Session::new(root.derive_indexed("om", t), SampleBudget::UNLIMITED);
            let assignment = online_regularized_match(&inst, &params, &mut s).unwrap();
            // perfect matching: both surrogates used exactly once
            let mut used = [0u32; 2];
            for j in &assignment {
                used[*j] += 1;
            }
            assert_eq!(used, [1, 1]);
            if assignment[0] == 0 {
                first_gets_best += 1;
            }
        }
        assert!(
            first_gets_best > 180,
            "replica with value 1.0 on surrogate 0 should usually take it ({first_gets_best}/200)"
        );
    }

    #[test]
    fn single_surrogate_instance() {
        let mut reg = SourceRegistry::new();
        let means = Mat::from_rows(vec![vec![0.4]; 3]).unwrap();
        let inst = MatchingInstance::synthetic(&mut reg, means, 3).unwrap();
        let params = OnlineParams {
            delta: 0.2,
            eta: 0.25,
            gamma: 0.3,
        };
        let mut s = Session::from_seed(RandomSeed(62));
        let assignment = online_regularized_match(&inst, &params, &mut s).unwrap();
        assert_eq!(assignment, vec![0, 0, 0]);
    }
}
