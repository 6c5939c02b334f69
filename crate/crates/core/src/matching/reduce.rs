//! Surrogate selection and the full incentive-compatible reduction.
//!
//! To repair incentives of an arbitrary allocation algorithm, an agent's
//! report is not fed to the algorithm directly. Instead the report is hidden
//! among `km − 1` prior-drawn replicas, `m` surrogates are drawn from the
//! prior, the online entropy-regularized matcher pairs replicas with
//! surrogates, and the algorithm runs on the surrogate matched to the real
//! report. Because the matcher is maximal-in-range for every replica and the
//! matching is perfect, the composition is truthful and the selected
//! surrogate type is distributed exactly like the prior.

use crate::error::Error;
use crate::matching::gamma::{estimate_gamma, GammaEstimate};
use crate::matching::instance::MatchingInstance;
use crate::matching::online::{online_regularized_match, OnlineParams};
use crate::rng::{Session, SourceId, SourceRegistry, Stream};
use crate::urns::{scale_type, OutcomeId, TypeRef, ValueTable};
use crate::Result;

/// Finite-support type prior.
#[derive(Debug, Clone)]
pub struct FinitePrior {
    types: Vec<usize>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl FinitePrior {
    pub fn new(types: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if types.is_empty() || types.len() != probs.len() {
            return Err(Error::InvalidInput(
                "prior support and probabilities must be non-empty and equal length".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("prior must sum to 1".into()));
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
        Ok(FinitePrior { types, probs, cdf })
    }

    pub fn support(&self) -> &[usize] {
        &self.types
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut Stream) -> TypeRef {
        let u = rng.f64();
        let idx = self.cdf.partition_point(|c| *c < u);
        TypeRef::base(self.types[idx.min(self.types.len() - 1)])
    }
}

/// Single-agent (interim) view of an allocation algorithm: maps a type to a
/// sampled outcome. Implementations meter their own internal draws.
/// `Sync` so harnesses can fan independent trials across threads.
pub trait Algorithm: Sync {
    fn sample_outcome(&self, t: &TypeRef, s: &mut Session) -> Result<OutcomeId>;

    /// Exact interim outcome distribution, when the implementation can
    /// expose one (tables can; true black boxes cannot). Verification only.
    fn outcome_dist(&self, _t: &TypeRef) -> Option<Vec<f64>> {
        None
    }
}

/// Table-backed algorithm: one outcome distribution per type index. Scaled
/// types map to the same distribution (scaling affects values, not outcomes).
#[derive(Debug, Clone)]
pub struct TableAlgorithm {
    dists: Vec<Vec<f64>>,
    cdfs: Vec<Vec<f64>>,
    source: SourceId,
}

impl TableAlgorithm {
    pub fn new(reg: &mut SourceRegistry, dists: Vec<Vec<f64>>) -> Result<Self> {
        if dists.is_empty() || dists[0].is_empty() {
            return Err(Error::InvalidInput("empty algorithm table".into()));
        }
        let width = dists[0].len();
        let mut cdfs = Vec::with_capacity(dists.len());
        for d in &dists {
            if d.len() != width {
                return Err(Error::InvalidInput("ragged algorithm table".into()));
            }
            let total: f64 = d.iter().sum();
            if d.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(
                    "algorithm rows must be probability vectors".into(),
                ));
            }
            let mut cdf = Vec::with_capacity(d.len());
            let mut acc = 0.0;
            for p in d {
                acc += p;
                cdf.push(acc);
            }
            if let Some(last) = cdf.last_mut() {
                *last = 1.0;
            }
            cdfs.push(cdf);
        }
        Ok(TableAlgorithm {
            dists,
            cdfs,
            source: reg.register("alg"),
        })
    }
}

impl Algorithm for TableAlgorithm {
    fn sample_outcome(&self, t: &TypeRef, s: &mut Session) -> Result<OutcomeId> {
        let cdf = self
            .cdfs
            .get(t.index)
            .ok_or_else(|| Error::InvalidInput(format!("unknown type index {}", t.index)))?;
        s.meter(self.source)?;
        let u = s.rng().f64();
        Ok(cdf.partition_point(|c| *c < u).min(cdf.len() - 1))
    }

    fn outcome_dist(&self, t: &TypeRef) -> Option<Vec<f64>> {
        self.dists.get(t.index).cloned()
    }
}

/// How the online matcher's price scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMode {
    /// Estimate from an independent replica redraw.
    Auto,
    /// Use a fixed value (mainly for structural tests).
    Fixed(f64),
}

/// Options for one surrogate-selection run.
#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    pub delta: f64,
    pub eta: f64,
    pub gamma: GammaMode,
    /// Desk-scale override for the per-edge sample count in γ estimation.
    pub gamma_samples_override: Option<u64>,
}

/// Result of a surrogate-selection run.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    /// Uniformly drawn index of the real report among the replicas.
    pub istar: usize,
    /// Surrogate index matched to the real report.
    pub jstar: usize,
    /// The selected surrogate's type.
    pub surrogate: TypeRef,
    /// A fresh outcome drawn from the algorithm at the selected surrogate.
    pub outcome: OutcomeId,
    /// Price scale used by the matcher.
    pub gamma: f64,
    /// Edge samples consumed by the run (γ estimation included).
    pub edge_samples: u64,
}

/// Map a reported type to a surrogate type and outcome through the
/// replica-surrogate matching selection rule.
pub fn surrogate_select(
    report: &TypeRef,
    prior: &FinitePrior,
    alg: &dyn Algorithm,
    values: &ValueTable,
    m: usize,
    k: usize,
    opts: &SelectOptions,
    s: &mut Session,
) -> Result<SelectionOutcome> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter("need m >= 1 and k >= 1".into()));
    }
    let rows = m * k;
    let istar = s.rng().below(rows as u64) as usize;
    let mut replicas: Vec<TypeRef> = (0..rows).map(|_| prior.sample(s.rng())).collect();
    replicas[istar] = *report;
    let surrogates: Vec<TypeRef> = (0..m).map(|_| prior.sample(s.rng())).collect();

    let mut reg = SourceRegistry::new(); // instance-local edge meter
    let instance = MatchingInstance::reduction(
        &mut reg,
        replicas,
        surrogates.clone(),
        k,
        alg,
        values,
        prior,
    )?;

    let edges_before = s.ledger.total();
    let gamma = match opts.gamma {
        GammaMode::Fixed(g) => g,
        GammaMode::Auto => {
            let GammaEstimate { gamma, .. } = estimate_gamma(
                &instance,
                opts.delta,
                opts.eta,
                opts.gamma_samples_override,
                s,
            )?;
            gamma
        }
    };
    let params = OnlineParams {
        delta: opts.delta,
        eta: opts.eta,
        gamma,
    };
    let assignment = online_regularized_match(&instance, &params, s)?;
    let jstar = assignment[istar];
    let surrogate = surrogates[jstar];
    let outcome = alg.sample_outcome(&surrogate, s)?;
    Ok(SelectionOutcome {
        istar,
        jstar,
        surrogate,
        outcome,
        gamma,
        edge_samples: s.ledger.total() - edges_before,
    })
}

/// Parameters of the end-to-end reduction for target welfare loss `ε` and
/// competitive-ratio constant `c`: `δ = ε/(3 ln m)`, `η = ε/(3c)`,
/// `k = ⌈m ln m / η²⌉`.
#[derive(Debug, Clone, Copy)]
pub struct ReductionParams {
    pub epsilon: f64,
    pub c: f64,
    pub m: usize,
    pub k: usize,
    pub delta: f64,
    pub eta: f64,
}

impl ReductionParams {
    pub fn derive(epsilon: f64, c: f64, m: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {epsilon} outside (0,1)"
            )));
        }
        if c <= 0.0 {
            return Err(Error::InvalidParameter("constant c must be positive".into()));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("need at least one surrogate".into()));
        }
        let ln_m = (m as f64).ln();
        let eta = epsilon / (3.0 * c);
        let (delta, k) = if m == 1 {
            (f64::INFINITY, 1)
        } else {
            (
                epsilon / (3.0 * ln_m),
                ((m as f64) * ln_m / (eta * eta)).ceil() as usize,
            )
        };
        Ok(ReductionParams {
            epsilon,
            c,
            m,
            k,
            delta,
            eta,
        })
    }

    /// Same derivation but with the load overridden for desk-scale runs.
    pub fn with_load(mut self, k: usize) -> Self {
        self.k = k.max(1);
        self
    }

    pub fn select_options(&self, gamma_samples_override: Option<u64>) -> SelectOptions {
        SelectOptions {
            delta: self.delta,
            eta: self.eta,
            gamma: GammaMode::Auto,
            gamma_samples_override,
        }
    }
}

/// Market size sufficient for type spaces of doubling dimension `Δ ≥ 2`:
/// `m = ⌈1/(2 ε^{Δ+1})⌉`.
pub fn market_size_for_doubling_dim(ddim: f64, epsilon: f64) -> Result<u64> {
    if ddim < 2.0 {
        return Err(Error::InvalidParameter(format!(
            "doubling dimension {ddim} must be at least 2"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} outside (0,1)"
        )));
    }
    Ok((1.0 / (2.0 * epsilon.powf(ddim + 1.0))).ceil() as u64)
}

/// Joint allocation algorithm over full type profiles.
pub trait JointAlgorithm: Sync {
    fn sample_outcome(&self, profile: &[TypeRef], s: &mut Session) -> Result<OutcomeId>;
}

/// Interim view of a joint algorithm from one agent's seat: other agents'
/// types are drawn fresh from their priors on every call.
pub struct InterimView<'a> {
    pub joint: &'a dyn JointAlgorithm,
    pub priors: &'a [FinitePrior],
    pub seat: usize,
}

impl Algorithm for InterimView<'_> {
    fn sample_outcome(&self, t: &TypeRef, s: &mut Session) -> Result<OutcomeId> {
        let profile: Vec<TypeRef> = self
            .priors
            .iter()
            .enumerate()
            .map(|(q, prior)| {
                if q == self.seat {
                    *t
                } else {
                    prior.sample(s.rng())
                }
            })
            .collect();
        self.joint.sample_outcome(&profile, s)
    }
}

/// The composed mechanism: per-agent surrogate selection followed by one run
/// of the joint algorithm on the selected surrogates, with implicit payments
/// from `n+1` further mechanism calls.
pub struct BicReduction<'a> {
    pub joint: &'a dyn JointAlgorithm,
    pub priors: Vec<FinitePrior>,
    pub values: Vec<&'a ValueTable>,
    pub params: ReductionParams,
    pub gamma_samples_override: Option<u64>,
}

impl BicReduction<'_> {
    fn n(&self) -> usize {
        self.priors.len()
    }

    /// Surrogate profile for a reported profile: one independent
    /// surrogate-selection run per agent.
    pub fn select_surrogates(&self, profile: &[TypeRef], s: &mut Session) -> Result<Vec<TypeRef>> {
        if profile.len() != self.n() {
            return Err(Error::InvalidInput(format!(
                "profile has {} types for {} agents",
                profile.len(),
                self.n()
            )));
        }
        let opts = self.params.select_options(self.gamma_samples_override);
        profile
            .iter()
            .enumerate()
            .map(|(q, t)| {
                if self.params.m == 1 {
                    // single surrogate: selection is a fresh prior draw
                    return Ok(self.priors[q].sample(s.rng()));
                }
                let view = InterimView {
                    joint: self.joint,
                    priors: &self.priors,
                    seat: q,
                };
                let sel = surrogate_select(
                    t,
                    &self.priors[q],
                    &view,
                    self.values[q],
                    self.params.m,
                    self.params.k,
                    &opts,
                    s,
                )?;
                Ok(sel.surrogate)
            })
            .collect()
    }

    /// Allocate only.
    pub fn allocate(&self, profile: &[TypeRef], s: &mut Session) -> Result<OutcomeId> {
        let surrogates = self.select_surrogates(profile, s)?;
        self.joint.sample_outcome(&surrogates, s)
    }

    /// Allocate and charge: the outcome at the reported profile plus one
    /// payment sample per agent, each the value gap between the outcome at
    /// the reported profile and at the profile with that agent's type scaled
    /// by a shared uniform draw.
    pub fn run(&self, profile: &[TypeRef], s: &mut Session) -> Result<(OutcomeId, Vec<f64>)> {
        let o0 = self.allocate(profile, s)?;
        let lam = s.rng().f64();
        let mut payments = Vec::with_capacity(self.n());
        for q in 0..self.n() {
            let mut scaled = profile.to_vec();
            scaled[q] = scale_type(lam, &profile[q])?;
            let oq = self.allocate(&scaled, s)?;
            let v0 = self.values[q].value(&profile[q], o0)?;
            let vq = self.values[q].value(&profile[q], oq)?;
            payments.push(v0 - vq);
        }
        Ok((o0, payments))
    }
}
