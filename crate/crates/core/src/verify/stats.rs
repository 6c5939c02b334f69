//! Goodness-of-fit statistics for checking exact-sampling claims.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::Error;
use crate::Result;

/// Outcome of a distribution check.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
    pub trials: u64,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub tv_distance: f64,
    pub significance: f64,
    pub pass: bool,
}

/// Total variation distance between two distributions on the same support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Pearson chi-square test of observed counts against a target distribution.
///
/// Cells with expected count below 5 are pooled (smallest expectations
/// first) so the chi-square approximation stays valid for sharply peaked
/// targets. Passes iff the p-value exceeds `significance`.
pub fn chi_square_check(counts: &[u64], target: &[f64], significance: f64) -> Result<DistributionReport> {
    if counts.len() != target.len() || counts.is_empty() {
        return Err(Error::InvalidInput(
            "counts and target must be non-empty and equal length".into(),
        ));
    }
    let total_p: f64 = target.iter().sum();
    if (total_p - 1.0).abs() > 1e-9 || target.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidInput(format!(
            "target must be a probability vector (sums to {total_p})"
        )));
    }
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let empirical: Vec<f64> = counts.iter().map(|c| *c as f64 / nf).collect();
    let tv = tv_distance(&empirical, target);

    // Pool low-expectation cells.
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|a, b| target[*a].total_cmp(&target[*b]));
    let mut pooled: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    for idx in &order {
        acc_obs += counts[*idx] as f64;
        acc_exp += target[*idx] * nf;
        if acc_exp >= 5.0 {
            pooled.push((acc_obs, acc_exp));
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    if acc_exp > 0.0 || acc_obs > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += acc_obs;
            last.1 += acc_exp;
        } else {
            pooled.push((acc_obs, acc_exp));
        }
    }

    let (chi2, df, p_value, pass) = if pooled.len() < 2 {
        // Point-mass target: pass iff all mass landed on it.
        let ok = tv < 1e-12;
        (0.0, 0, 1.0, ok)
    } else {
        let chi2: f64 = pooled
            .iter()
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let df = pooled.len() - 1;
        let dist = ChiSquared::new(df as f64)
            .map_err(|e| Error::InvalidInput(format!("chi-square df: {e}")))?;
        let p = 1.0 - dist.cdf(chi2);
        (chi2, df, p, p > significance)
    };

    Ok(DistributionReport {
        target: target.to_vec(),
        empirical,
        trials: n,
        chi2,
        df,
        p_value,
        tv_distance: tv,
        significance,
        pass,
    })
}

/// Two-sided z-quantile for the 99.9% binomial confidence band.
pub const Z_999: f64 = 3.290_526_731_491_9;

/// Does an empirical frequency sit inside the 99.9% confidence band of a
/// binomial with success probability `p` over `n` trials?
pub fn within_binomial_ci(p_hat: f64, p: f64, n: u64) -> bool {
    if p <= 0.0 || p >= 1.0 {
        return (p_hat - p).abs() < 1e-12;
    }
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    (p_hat - p).abs() <= Z_999 * sigma
}

/// Sample mean and standard error.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSeed, Stream};

    #[test]
    fn fair_coin_passes() {
        let mut rng = Stream::root(RandomSeed(5));
        let n = 100_000;
        let mut counts = [0u64; 2];
        for _ in 0..n {
            counts[usize::from(rng.bernoulli(0.5))] += 1;
        }
        let rep = chi_square_check(&counts, &[0.5, 0.5], 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn biased_coin_fails_against_fair_target() {
        let mut rng = Stream::root(RandomSeed(6));
        let n = 100_000;
        let mut counts = [0u64; 2];
        for _ in 0..n {
            counts[usize::from(rng.bernoulli(0.6))] += 1;
        }
        let rep = chi_square_check(&counts, &[0.5, 0.5], 1e-3).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn point_mass_passes_trivially() {
        let rep = chi_square_check(&[1000], &[1.0], 1e-3).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.df, 0);
    }

    #[test]
    fn pooling_keeps_expectations_reasonable() {
        // Sharply peaked target with a fat head and tiny tail cells.
        let target = [0.989, 0.005, 0.003, 0.002, 0.001];
        let counts = [98_907u64, 497, 302, 193, 101];
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn tv_examples() {
        assert!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]) < 1e-15);
        assert!((tv_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
