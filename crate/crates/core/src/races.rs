//! Exact selection with linear and exponential weights, given only sample
//! access to the weights.
//!
//! The linear race repeatedly picks a coin uniformly at random and flips it;
//! the first heads wins, giving `P[i] = v_i / Σ_j v_j` exactly with an
//! expected `m / Σ_j v_j` draws. The exponential races first replace every
//! coin with its exponentiated version (bias `e^{λ(v_i−1)}`) and then run
//! the linear race, giving `P[i] = e^{λ v_i} / Σ_j e^{λ v_j}` exactly.
//!
//! The basic exponential race needs an expected `λ·m·e^{λ(1−v_max)}` draws,
//! which blows up when `v_max` is bounded away from one. The fast variant
//! exploits shift invariance of exponential weights: it estimates `v_max`,
//! boosts every weight by a common additive shift so the maximum lands near
//! one, and reruns the basic race with a rescaled rate. The output
//! distribution is unchanged — exactly exponential weights in the original
//! weights — for *any* realized value of the estimate.

use crate::error::Error;
use crate::factory::CoinExpr;
use crate::rng::Session;
use crate::Result;

/// Winner of a race plus the number of base draws it consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaceResult {
    /// 0-based index of the selected coin.
    pub winner: usize,
    /// Ledger delta over the invocation.
    pub draws: u64,
}

/// Parameters of the fast exponential race. Requires `λ > 4` so that
/// `ε = 1/λ < 1/4` and the rescaled rate `λ′ = λ/(1−2ε)` stays finite.
#[derive(Debug, Clone, Copy)]
pub struct ExpRaceParams {
    pub lambda: f64,
    pub eps: f64,
    pub lambda_prime: f64,
}

impl ExpRaceParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 4.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "fast exponential race requires lambda > 4, got {lambda}"
            )));
        }
        let eps = 1.0 / lambda;
        Ok(ExpRaceParams {
            lambda,
            eps,
            lambda_prime: lambda / (1.0 - 2.0 * eps),
        })
    }
}

/// Uniform-pick Bernoulli race: `P[i] = v_i / Σ_j v_j` exactly.
pub fn bernoulli_race(coins: &[CoinExpr], s: &mut Session) -> Result<RaceResult> {
    if coins.is_empty() {
        return Err(Error::InvalidInput("race over zero coins".into()));
    }
    let m = coins.len() as u64;
    let before = s.ledger.total();
    loop {
        let i = s.rng().below(m) as usize;
        if coins[i].flip(s)? {
            return Ok(RaceResult {
                winner: i,
                draws: s.ledger.total() - before,
            });
        }
    }
}

/// Alternative linear race via exponential clocks: accumulate unit-rate
/// exponential jitter per coin until its first heads and pick the smallest
/// total. The sum of a Geometric(v) number of Exp(1) variables is Exp(v), so
/// the argmin reproduces the linear-weights distribution exactly, at an
/// expected `Σ_i 1/v_i` draws. Kept as an independent cross-check of the
/// uniform-pick implementation.
pub fn bernoulli_race_exp_clock(coins: &[CoinExpr], s: &mut Session) -> Result<RaceResult> {
    if coins.is_empty() {
        return Err(Error::InvalidInput("race over zero coins".into()));
    }
    let before = s.ledger.total();
    let mut best = (f64::INFINITY, 0usize);
    for (i, coin) in coins.iter().enumerate() {
        let mut clock = 0.0;
        loop {
            clock += s.rng().exp1();
            if coin.flip(s)? {
                break;
            }
        }
        if clock < best.0 {
            best = (clock, i);
        }
    }
    Ok(RaceResult {
        winner: best.1,
        draws: s.ledger.total() - before,
    })
}

/// Basic exponential race: `P[i] ∝ e^{λ v_i}` exactly, expected draws
/// `λ·m·e^{λ(1−v_max)}`.
pub fn basic_exp_race(coins: &[CoinExpr], lambda: f64, s: &mut Session) -> Result<RaceResult> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "exponential race requires lambda > 0, got {lambda}"
        )));
    }
    let exponentiated: Vec<CoinExpr> = coins
        .iter()
        .map(|c| CoinExpr::exponentiate(lambda, c.clone()))
        .collect::<Result<_>>()?;
    bernoulli_race(&exponentiated, s)
}

/// Draw `⌈(4/ε²)·ln(4m/ε)⌉` samples from each coin and return the largest
/// empirical mean (lowest index on ties). Over the construction randomness
/// the expectation of this estimate is within `±ε` of `v_max`.
pub fn estimate_vmax(coins: &[CoinExpr], eps: f64, s: &mut Session) -> Result<f64> {
    if !(0.0 < eps && eps <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "vmax estimation requires eps in (0,1], got {eps}"
        )));
    }
    if coins.is_empty() {
        return Err(Error::InvalidInput("vmax estimation over zero coins".into()));
    }
    let m = coins.len() as f64;
    let n = ((4.0 / (eps * eps)) * (4.0 * m / eps).ln()).ceil() as u64;
    let mut best = 0.0f64;
    for coin in coins {
        let mut heads = 0u64;
        for _ in 0..n {
            if coin.flip(s)? {
                heads += 1;
            }
        }
        let mean = heads as f64 / n as f64;
        if mean > best {
            best = mean;
        }
    }
    Ok(best)
}

/// The estimate wrapped as a fixed-bias coin (no further base draws).
pub fn estimate_vmax_coin<'a>(coins: &[CoinExpr], eps: f64, s: &mut Session) -> Result<CoinExpr<'a>> {
    CoinExpr::constant(estimate_vmax(coins, eps, s)?)
}

/// Fast exponential race: `P[i] ∝ e^{λ v_i}` exactly for `λ > 4`, with
/// sample cost polynomial in `λ` and `m`.
pub fn fast_exp_race(coins: &[CoinExpr], lambda: f64, s: &mut Session) -> Result<RaceResult> {
    let params = ExpRaceParams::new(lambda)?;
    let before = s.ledger.total();
    let vmax_hat = estimate_vmax(coins, params.eps, s)?;
    let mut result = fast_exp_race_with_estimate(coins, lambda, vmax_hat, s)?;
    result.draws = s.ledger.total() - before;
    Ok(result)
}

/// Fast exponential race reusing a previously constructed `v_max` estimate.
///
/// By shift invariance the output marginals equal exponential weights in the
/// original biases for any fixed estimate, so a harness may build the
/// estimate once and run many races against it; only the sample cost (and
/// the addition slack margin) depends on the estimate's quality.
pub fn fast_exp_race_with_estimate(
    coins: &[CoinExpr],
    lambda: f64,
    vmax_hat: f64,
    s: &mut Session,
) -> Result<RaceResult> {
    let params = ExpRaceParams::new(lambda)?;
    if !(0.0..=1.0).contains(&vmax_hat) {
        return Err(Error::InvalidParameter(format!(
            "vmax estimate {vmax_hat} outside [0,1]"
        )));
    }
    if coins.is_empty() {
        return Err(Error::InvalidInput("race over zero coins".into()));
    }
    let before = s.ledger.total();
    let eps = params.eps;
    let scale = 1.0 - 2.0 * eps;

    // Common additive boost (1−2ε)(1−z), built from the estimate coin.
    let boost = CoinExpr::scale(scale, CoinExpr::complement(CoinExpr::constant(vmax_hat)?))?;

    // v'_i = (1−2ε)·v_i + (1−2ε)(1−z) ≤ 1−ε, added with slack ε.
    let boosted: Vec<CoinExpr> = coins
        .iter()
        .map(|c| {
            CoinExpr::add(
                CoinExpr::scale(scale, c.clone())?,
                boost.clone(),
                eps,
            )
        })
        .collect::<Result<_>>()?;

    let mut result = basic_exp_race(&boosted, params.lambda_prime, s)?;
    result.draws = s.ledger.total() - before;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSeed, SampleBudget, SourceRegistry, Stream};
    use crate::verify::oracles::{exact_exp_weights, exact_linear_weights};
    use crate::verify::sources::SyntheticCoin;
    use crate::verify::stats::chi_square_check;

    fn setup(biases: &[f64]) -> (SourceRegistry, Vec<SyntheticCoin>) {
        let mut reg = SourceRegistry::new();
        let coins = biases
            .iter()
            .enumerate()
            .map(|(i, b)| SyntheticCoin::register(&mut reg, format!("coin-{i}"), *b))
            .collect();
        (reg, coins)
    }

    fn exprs<'a>(coins: &'a [SyntheticCoin]) -> Vec<CoinExpr<'a>> {
        coins.iter().map(|c| CoinExpr::leaf(c)).collect()
    }

    fn race_counts(
        races: u64,
        seed: u64,
        mut run: impl FnMut(&mut Session) -> Result<RaceResult>,
        m: usize,
    ) -> (Vec<u64>, f64) {
        let root = Stream::root(RandomSeed(seed));
        let mut counts = vec![0u64; m];
        let mut draws = 0u64;
        for t in 0..races {
            let mut s = Session::new(root.derive_indexed("race", t), SampleBudget::limited(1_000_000_000));
            let r = run(&mut s).unwrap();
            counts[r.winner] += 1;
            draws += r.draws;
        }
        (counts, draws as f64 / races as f64)
    }

    #[test]
    fn single_coin_always_wins() {
        let (_reg, coins) = setup(&[1.0]);
        let e = exprs(&coins);
        let mut s = Session::from_seed(RandomSeed(1));
        let r = bernoulli_race(&e, &mut s).unwrap();
        assert_eq!(r.winner, 0);
        assert_eq!(r.draws, 1); // one flip of a sure coin ends the race
        assert_eq!(s.ledger.total(), 1);
    }

    #[test]
    fn linear_race_distribution_and_cost() {
        let biases = [0.2, 0.6];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let n = 60_000;
        let (counts, mean_draws) = race_counts(n, 42, |s| bernoulli_race(&e, s), 2);
        let target = exact_linear_weights(&biases).unwrap();
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
        let predicted = 2.0 / 0.8;
        assert!(
            (mean_draws - predicted).abs() / predicted < 0.05,
            "mean draws {mean_draws} vs {predicted}"
        );
    }

    #[test]
    fn exp_clock_race_matches_linear_weights() {
        let biases = [0.3, 0.5, 0.2];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let (counts, _) = race_counts(40_000, 43, |s| bernoulli_race_exp_clock(&e, s), 3);
        let target = exact_linear_weights(&biases).unwrap();
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn basic_exp_race_distribution() {
        let biases = [0.2, 0.8];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let lambda = 5.0;
        let (counts, _) = race_counts(50_000, 44, |s| basic_exp_race(&e, lambda, s), 2);
        let target = exact_exp_weights(&biases, lambda).unwrap();
        // Independent arithmetic for the two-coin case: 1/(1+e^{λΔ}).
        assert!((target[0] - 1.0 / (1.0 + (lambda * 0.6f64).exp())).abs() < 1e-12);
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn equal_biases_race_uniformly() {
        let biases = [1.0, 1.0];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let (counts, _) = race_counts(40_000, 45, |s| basic_exp_race(&e, 3.0, s), 2);
        let rep = chi_square_check(&counts, &[0.5, 0.5], 1e-3).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn vmax_estimate_concentrates() {
        let (_reg, coins) = setup(&[0.2, 0.5, 0.8]);
        let e = exprs(&coins);
        let root = Stream::root(RandomSeed(46));
        let mut hits = 0;
        let runs = 100;
        for t in 0..runs {
            let mut s = Session::new(root.derive_indexed("est", t), SampleBudget::UNLIMITED);
            let v = estimate_vmax(&e, 0.1, &mut s).unwrap();
            if (v - 0.8).abs() < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/{runs} estimates within 0.05");
    }

    #[test]
    fn vmax_estimate_degenerate_coins() {
        let (_reg, coins) = setup(&[1.0]);
        let e = exprs(&coins);
        let mut s = Session::from_seed(RandomSeed(2));
        assert_eq!(estimate_vmax(&e, 0.5, &mut s).unwrap(), 1.0);
        let (_reg2, coins2) = setup(&[0.0]);
        let e2 = exprs(&coins2);
        assert_eq!(estimate_vmax(&e2, 0.5, &mut s).unwrap(), 0.0);
    }

    #[test]
    fn fast_race_rejects_small_lambda() {
        let (_reg, coins) = setup(&[0.5, 0.5]);
        let e = exprs(&coins);
        let mut s = Session::from_seed(RandomSeed(3));
        assert!(matches!(
            fast_exp_race(&e, 4.0, &mut s),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn fast_race_distribution() {
        let biases = [0.2, 0.8];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let lambda = 10.0;
        let (counts, _) = race_counts(12_000, 47, |s| fast_exp_race(&e, lambda, s), 2);
        let target = exact_exp_weights(&biases, lambda).unwrap();
        assert!((target[0] - 1.0 / (1.0 + (6.0f64).exp())).abs() < 1e-12);
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn fast_race_uniform_for_equal_biases() {
        let biases = [0.5; 5];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let (counts, _) = race_counts(8_000, 48, |s| fast_exp_race(&e, 8.0, s), 5);
        let rep = chi_square_check(&counts, &vec![0.2; 5], 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn fast_race_beats_basic_at_large_lambda() {
        let biases = [0.5; 5];
        let (_reg, coins) = setup(&biases);
        let e = exprs(&coins);
        let lambda = 20.0;
        let races = 200;
        let (_, fast_mean) = race_counts(races, 49, |s| fast_exp_race(&e, lambda, s), 5);
        // Basic race needs λ·m·e^{λ/2} ≈ 2.2e6 draws per race here.
        let predicted_basic = lambda * 5.0 * (lambda / 2.0).exp();
        assert!(
            fast_mean * 10.0 < predicted_basic,
            "fast {fast_mean} vs predicted basic {predicted_basic}"
        );
        let (_, basic_mean) = race_counts(3, 50, |s| basic_exp_race(&e, lambda, s), 5);
        assert!(
            basic_mean > predicted_basic / 20.0,
            "basic race unexpectedly cheap: {basic_mean}"
        );
    }

    #[test]
    fn budget_guards_nontermination() {
        let (_reg, coins) = setup(&[0.0, 0.0]);
        let e = exprs(&coins);
        let mut s = Session::new(Stream::root(RandomSeed(9)), SampleBudget::limited(1000));
        match bernoulli_race(&e, &mut s) {
            Err(Error::BudgetExceeded { drawn }) => assert_eq!(drawn, 1000),
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
