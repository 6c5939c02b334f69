//! Truthful allocation over sampled urns.
//!
//! An agent reports a type; the mechanism must assign one of `m` urns, each
//! a black-box distribution over outcomes, knowing values only through
//! sampled outcomes. Picking the empirically best urn is manipulable — an
//! agent can zero out reported values on outcomes that only appear in
//! close-runner urns and force its favorite. The truthful mechanism instead
//! samples the urn from exponential weights at rate `λ = ln(m)/ε`, the
//! entropy-regularized argmax, which is maximal-in-range and loses at most
//! `ε` welfare. Payments are computed implicitly from two allocation calls
//! using the star-convex structure of the type space.

use crate::error::Error;
use crate::factory::CoinExpr;
use crate::races;
use crate::rng::{Session, SourceId, SourceRegistry};
use crate::sources::RealSource;
use crate::Result;

/// Opaque outcome handle.
pub type OutcomeId = usize;

/// Handle to a (possibly scaled) type: row `index` of a value table with
/// all values multiplied by `scale`. Scaling by `λ ∈ [0,1]` is exact, which
/// is what makes the implicit payment identity hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeRef {
    pub index: usize,
    pub scale: f64,
}

impl TypeRef {
    pub fn base(index: usize) -> Self {
        TypeRef { index, scale: 1.0 }
    }
}

/// Per-type, per-outcome values in `[0,1]`.
#[derive(Debug, Clone)]
pub struct ValueTable {
    rows: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidInput("empty value table".into()));
        }
        let width = rows[0].len();
        for row in &rows {
            if row.len() != width {
                return Err(Error::InvalidInput("ragged value table".into()));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::ContractViolation(
                    "valuation outside [0,1]".into(),
                ));
            }
        }
        Ok(ValueTable { rows })
    }

    pub fn num_types(&self) -> usize {
        self.rows.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.rows[0].len()
    }

    /// `v(t, o)`, with the type's scale applied.
    pub fn value(&self, t: &TypeRef, o: OutcomeId) -> Result<f64> {
        let row = self
            .rows
            .get(t.index)
            .ok_or_else(|| Error::InvalidInput(format!("unknown type index {}", t.index)))?;
        let raw = *row
            .get(o)
            .ok_or_else(|| Error::InvalidInput(format!("unknown outcome {o}")))?;
        let v = t.scale * raw;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ContractViolation(format!("value {v} outside [0,1]")));
        }
        Ok(v)
    }
}

/// Scaled copy of a type: `value(scale_type(λ, t), o) = λ·value(t, o)`.
pub fn scale_type(lambda: f64, t: &TypeRef) -> Result<TypeRef> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "type scale {lambda} outside [0,1]"
        )));
    }
    Ok(TypeRef {
        index: t.index,
        scale: lambda * t.scale,
    })
}

/// A single urn: a fixed distribution over outcome handles.
#[derive(Debug, Clone)]
pub struct UrnDist {
    outcomes: Vec<OutcomeId>,
    cdf: Vec<f64>,
}

impl UrnDist {
    pub fn new(outcomes: Vec<OutcomeId>, probs: Vec<f64>) -> Result<Self> {
        if outcomes.is_empty() || outcomes.len() != probs.len() {
            return Err(Error::InvalidInput(
                "urn outcomes/probs must be non-empty and equal length".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("urn probabilities must sum to 1".into()));
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(UrnDist { outcomes, cdf })
    }

    pub fn support(&self) -> &[OutcomeId] {
        &self.outcomes
    }

    pub fn prob(&self, idx: usize) -> f64 {
        let prev = if idx == 0 { 0.0 } else { self.cdf[idx - 1] };
        self.cdf[idx] - prev
    }
}

/// `m` outcome-samplers plus a valuation oracle over a star-convex type space.
#[derive(Debug, Clone)]
pub struct UrnEnvironment {
    urns: Vec<UrnDist>,
    pub values: ValueTable,
    urn_sources: Vec<SourceId>,
}

impl UrnEnvironment {
    pub fn new(reg: &mut SourceRegistry, urns: Vec<UrnDist>, values: ValueTable) -> Result<Self> {
        if urns.is_empty() {
            return Err(Error::InvalidInput("environment needs at least one urn".into()));
        }
        for urn in &urns {
            for o in urn.support() {
                if *o >= values.num_outcomes() {
                    return Err(Error::InvalidInput(format!(
                        "urn outcome {o} missing from value table"
                    )));
                }
            }
        }
        let urn_sources = (0..urns.len())
            .map(|j| reg.register(format!("urn-{j}")))
            .collect();
        Ok(UrnEnvironment {
            urns,
            values,
            urn_sources,
        })
    }

    pub fn num_urns(&self) -> usize {
        self.urns.len()
    }

    /// One metered draw from urn `j`.
    pub fn sample_outcome(&self, j: usize, s: &mut Session) -> Result<OutcomeId> {
        let urn = self
            .urns
            .get(j)
            .ok_or_else(|| Error::InvalidInput(format!("unknown urn {j}")))?;
        s.meter(self.urn_sources[j])?;
        let u = s.rng().f64();
        let idx = urn.cdf.partition_point(|c| *c < u);
        Ok(urn.outcomes[idx.min(urn.outcomes.len() - 1)])
    }

    /// Value distribution of urn `j` under type `t`, as a sampleable source:
    /// one flip costs one urn draw plus one valuation call and has bias
    /// exactly `v_j(t) = E_{o∼D_j} v(t,o)`.
    pub fn urn_value_source<'e>(&'e self, t: TypeRef, j: usize) -> UrnValueSource<'e> {
        UrnValueSource { env: self, t, j }
    }

    /// Closed-form interim value `v_j(t)`. Verification and reporting only —
    /// the sampling mechanisms never call this.
    pub fn true_urn_mean(&self, t: &TypeRef, j: usize) -> Result<f64> {
        let urn = self
            .urns
            .get(j)
            .ok_or_else(|| Error::InvalidInput(format!("unknown urn {j}")))?;
        let mut mean = 0.0;
        for (idx, o) in urn.outcomes.iter().enumerate() {
            mean += urn.prob(idx) * self.values.value(t, *o)?;
        }
        Ok(mean)
    }

    /// All interim values `v_j(t)`. Verification and reporting only.
    pub fn true_urn_means(&self, t: &TypeRef) -> Result<Vec<f64>> {
        (0..self.num_urns()).map(|j| self.true_urn_mean(t, j)).collect()
    }
}

/// `RealSource` view of one urn under one type.
pub struct UrnValueSource<'e> {
    env: &'e UrnEnvironment,
    t: TypeRef,
    j: usize,
}

impl RealSource for UrnValueSource<'_> {
    fn id(&self) -> SourceId {
        self.env.urn_sources[self.j]
    }

    fn draw(&self, s: &mut Session) -> Result<f64> {
        let o = self.env.sample_outcome(self.j, s)?;
        self.env.values.value(&self.t, o)
    }
}

/// Exponential-weights rate for welfare slack `ε`: `λ = ln(m)/ε`.
pub fn exp_weights_rate(m: usize, eps: f64) -> Result<f64> {
    if !(0.0 < eps && eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {eps} outside (0,1)"
        )));
    }
    Ok((m as f64).ln() / eps)
}

/// Reusable allocator for one `(environment, reported type, ε)` triple.
///
/// Preparing it performs the max-value estimation once (when the rate
/// requires the fast race); each `allocate` call then runs a fresh race.
/// Marginals are exactly exponential weights for any fixed estimate, so
/// repeated allocations remain i.i.d. with the exact target distribution.
pub struct Allocator<'e> {
    env: &'e UrnEnvironment,
    t: TypeRef,
    lambda: f64,
    vmax_hat: Option<f64>,
}

impl<'e> Allocator<'e> {
    pub fn prepare(env: &'e UrnEnvironment, t: TypeRef, eps: f64, s: &mut Session) -> Result<Self> {
        let m = env.num_urns();
        let lambda = exp_weights_rate(m, eps)?;
        let vmax_hat = if m > 1 && lambda > 4.0 {
            let sources: Vec<UrnValueSource> =
                (0..m).map(|j| env.urn_value_source(t, j)).collect();
            let coins: Vec<CoinExpr> = sources
                .iter()
                .map(|src| CoinExpr::from_values(src))
                .collect();
            Some(races::estimate_vmax(&coins, 1.0 / lambda, s)?)
        } else {
            None
        };
        Ok(Allocator {
            env,
            t,
            lambda,
            vmax_hat,
        })
    }

    /// Sample an urn with marginals exactly `e^{λ v_j(t)} / Σ e^{λ v_{j'}(t)}`.
    pub fn allocate(&self, s: &mut Session) -> Result<usize> {
        let m = self.env.num_urns();
        if m == 1 {
            return Ok(0);
        }
        let sources: Vec<UrnValueSource> = (0..m)
            .map(|j| self.env.urn_value_source(self.t, j))
            .collect();
        let coins: Vec<CoinExpr> = sources
            .iter()
            .map(|src| CoinExpr::from_values(src))
            .collect();
        let result = match self.vmax_hat {
            Some(vhat) => races::fast_exp_race_with_estimate(&coins, self.lambda, vhat, s)?,
            // ln(m)/ε ≤ 4 stays polynomial under the basic race already.
            None => races::basic_exp_race(&coins, self.lambda, s)?,
        };
        Ok(result.winner)
    }
}

/// One-shot truthful allocation: marginals exactly exponential weights at
/// `λ = ln(m)/ε`, welfare at least `max_j v_j(t) − ε`.
pub fn allocate(env: &UrnEnvironment, t: TypeRef, eps: f64, s: &mut Session) -> Result<usize> {
    Allocator::prepare(env, t, eps, s)?.allocate(s)
}

/// One payment sample for the implicit-payment scheme: draw `Λ ~ U[0,1]`,
/// allocate at `t` and at `Λ·t`, charge the value difference of the two
/// realized outcomes. In expectation this equals
/// `v(t, x(t)) − ∫₀¹ v(t, x(λt)) dλ`; individual samples may be negative.
pub fn charge(env: &UrnEnvironment, t: TypeRef, eps: f64, s: &mut Session) -> Result<f64> {
    let (_, payment) = mechanism_run(env, t, eps, s)?;
    Ok(payment)
}

/// Full mechanism invocation for a reported type: the allocated outcome and
/// the payment sample. Values inside the payment are evaluated at the
/// reported type (the mechanism never sees the true one).
pub fn mechanism_run(
    env: &UrnEnvironment,
    report: TypeRef,
    eps: f64,
    s: &mut Session,
) -> Result<(OutcomeId, f64)> {
    let alloc = Allocator::prepare(env, report, eps, s)?;
    mechanism_run_with(&alloc, env, report, eps, s)
}

/// Mechanism invocation reusing a prepared allocator for the reported type.
pub fn mechanism_run_with(
    prepared: &Allocator,
    env: &UrnEnvironment,
    report: TypeRef,
    eps: f64,
    s: &mut Session,
) -> Result<(OutcomeId, f64)> {
    let j0 = prepared.allocate(s)?;
    let o0 = env.sample_outcome(j0, s)?;
    if env.num_urns() == 1 && env.urns[0].outcomes.len() == 1 {
        return Ok((o0, 0.0));
    }
    let lam = s.rng().f64();
    let scaled = scale_type(lam, &report)?;
    let j1 = allocate(env, scaled, eps, s)?;
    let o1 = env.sample_outcome(j1, s)?;
    let payment = env.values.value(&report, o0)? - env.values.value(&report, o1)?;
    Ok((o0, payment))
}

/// The manipulable baseline: estimate every urn mean with `n` samples and
/// pick the argmax (lowest index on ties). Charges nothing.
pub fn naive_allocate(
    env: &UrnEnvironment,
    t: TypeRef,
    n: u64,
    s: &mut Session,
) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample per urn".into()));
    }
    let m = env.num_urns();
    if m == 1 {
        return Ok(0);
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for j in 0..m {
        let mut sum = 0.0;
        for _ in 0..n {
            let o = env.sample_outcome(j, s)?;
            sum += env.values.value(&t, o)?;
        }
        let mean = sum / n as f64;
        if mean > best.0 {
            best = (mean, j);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSeed, SampleBudget, Stream};
    use crate::verify::oracles::exact_exp_weights;
    use crate::verify::stats::chi_square_check;

    fn session(seed: u64) -> Session {
        Session::new(Stream::root(RandomSeed(seed)), SampleBudget::UNLIMITED)
    }

    /// Two urns, three outcomes valued (1/3, 2/3, 1) by the truthful type.
    /// Urn 0 is a point mass on the middle outcome; urn 1 mixes the extremes
    /// with the low outcome slightly more likely. Type 1 misreports the top
    /// outcome as worthless.
    pub(crate) fn demo_env(reg: &mut SourceRegistry) -> UrnEnvironment {
        let urns = vec![
            UrnDist::new(vec![1], vec![1.0]).unwrap(),
            UrnDist::new(vec![0, 2], vec![0.55, 0.45]).unwrap(),
        ];
        let values = ValueTable::new(vec![
            vec![1.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![1.0 / 3.0, 2.0 / 3.0, 0.0],
        ])
        .unwrap();
        UrnEnvironment::new(reg, urns, values).unwrap()
    }

    #[test]
    fn value_scaling_law() {
        let mut reg = SourceRegistry::new();
        let env = demo_env(&mut reg);
        let t = TypeRef::base(0);
        for lam in [0.0, 0.25, 0.6, 1.0] {
            let scaled = scale_type(lam, &t).unwrap();
            for o in 0..3 {
                let a = env.values.value(&scaled, o).unwrap();
                let b = lam * env.values.value(&t, o).unwrap();
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(scale_type(1.5, &t).is_err());
    }

    #[test]
    fn urn_value_source_bias() {
        let mut reg = SourceRegistry::new();
        let env = demo_env(&mut reg);
        let t = TypeRef::base(0);
        // closed form: urn 1 mean = 0.55/3 + 0.45
        let want = 0.55 / 3.0 + 0.45;
        assert!((env.true_urn_mean(&t, 1).unwrap() - want).abs() < 1e-15);
        let src = env.urn_value_source(t, 1);
        let mut s = session(3);
        let n = 40_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += src.draw(&mut s).unwrap();
        }
        assert!((sum / n as f64 - want).abs() < 0.01);
        assert_eq!(s.ledger.total(), n); // one urn draw per value draw
    }

    #[test]
    fn single_urn_short_circuits() {
        let mut reg = SourceRegistry::new();
        let urns = vec![UrnDist::new(vec![0], vec![1.0]).unwrap()];
        let values = ValueTable::new(vec![vec![0.8]]).unwrap();
        let env = UrnEnvironment::new(&mut reg, urns, values).unwrap();
        let mut s = session(4);
        assert_eq!(allocate(&env, TypeRef::base(0), 0.2, &mut s).unwrap(), 0);
        assert_eq!(s.ledger.total(), 0);
        let (_, pay) = mechanism_run(&env, TypeRef::base(0), 0.2, &mut s).unwrap();
        assert_eq!(pay, 0.0);
    }

    #[test]
    fn allocation_matches_exponential_weights() {
        let mut reg = SourceRegistry::new();
        let env = demo_env(&mut reg);
        let t = TypeRef::base(0);
        let eps = 0.2;
        let means = env.true_urn_means(&t).unwrap();
        let lambda = exp_weights_rate(2, eps).unwrap();
        let target = exact_exp_weights(&means, lambda).unwrap();
        let root = Stream::root(RandomSeed(50));
        let mut prep = session(51);
        let alloc = Allocator::prepare(&env, t, eps, &mut prep).unwrap();
        let mut counts = [0u64; 2];
        for trial in 0..40_000u64 {
            let mut s = Session::new(root.derive_indexed("alloc", trial), SampleBudget::UNLIMITED);
            counts[alloc.allocate(&mut s).unwrap()] += 1;
        }
        let rep = chi_square_check(&counts, &target, 1e-3).unwrap();
        assert!(rep.pass, "p={}", rep.p_value);
    }

    #[test]
    fn naive_baseline_is_manipulable() {
        let mut reg = SourceRegistry::new();
        let env = demo_env(&mut reg);
        let truth = TypeRef::base(0);
        let lie = TypeRef::base(1);
        let root = Stream::root(RandomSeed(52));
        let mut truthful_other = 0u64;
        let trials = 4_000u64;
        for trial in 0..trials {
            let mut s = Session::new(root.derive_indexed("naive", trial), SampleBudget::UNLIMITED);
            if naive_allocate(&env, truth, 50, &mut s).unwrap() == 1 {
                truthful_other += 1;
            }
            // misreporting the top outcome as zero forces urn 0 every time
            let mut s2 = Session::new(root.derive_indexed("naive-lie", trial), SampleBudget::UNLIMITED);
            assert_eq!(naive_allocate(&env, lie, 50, &mut s2).unwrap(), 0);
        }
        assert!(
            truthful_other > 0,
            "truthful report should sometimes get the mixed urn"
        );
    }

    #[test]
    fn deterministic_urns_pick_argmax() {
        let mut reg = SourceRegistry::new();
        let urns = vec![
            UrnDist::new(vec![0], vec![1.0]).unwrap(),
            UrnDist::new(vec![1], vec![1.0]).unwrap(),
        ];
        let values = ValueTable::new(vec![vec![0.0, 1.0]]).unwrap();
        let env = UrnEnvironment::new(&mut reg, urns, values).unwrap();
        let mut s = session(5);
        assert_eq!(naive_allocate(&env, TypeRef::base(0), 3, &mut s).unwrap(), 1);
    }

    #[test]
    fn symmetric_payment_is_centered() {
        let mut reg = SourceRegistry::new();
        // identical urns: allocation is scale-invariant, expected payment 0
        let urns = vec![
            UrnDist::new(vec![0, 1], vec![0.5, 0.5]).unwrap(),
            UrnDist::new(vec![0, 1], vec![0.5, 0.5]).unwrap(),
        ];
        let values = ValueTable::new(vec![vec![0.2, 0.8]]).unwrap();
        let env = UrnEnvironment::new(&mut reg, urns, values).unwrap();
        let root = Stream::root(RandomSeed(53));
        let trials = 20_000u64;
        let mut sum = 0.0;
        for trial in 0..trials {
            let mut s = Session::new(root.derive_indexed("pay", trial), SampleBudget::UNLIMITED);
            sum += charge(&env, TypeRef::base(0), 0.3, &mut s).unwrap();
        }
        let mean = sum / trials as f64;
        // per-sample payments are noisy; the mean should sit near zero
        assert!(mean.abs() < 0.01, "mean payment {mean}");
    }
}
