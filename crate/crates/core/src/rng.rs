//! Deterministic randomness and sample accounting.
//!
//! All randomness flows through [`Stream`], a counter-based generator keyed
//! by `(seed, label, counter)`. Derivation is by identity, not by position:
//! deriving the same label from the same parent always yields the same
//! stream, no matter how many draws the parent has made. That is what makes
//! independent trials reproducible and safely parallelizable — each trial
//! owns its own derived stream and its own ledger, and no state is shared.
//!
//! The [`SampleLedger`] meters *base* draws only: one increment per physical
//! draw from an input distribution. Derived coins built by the factory
//! combinators add no counts of their own; their internal randomness comes
//! from the session stream and is deliberately unmetered.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::Error;
use crate::Result;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a over the label bytes, then one avalanche round.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// Master seed for an experiment. Two runs with the same seed and the same
/// call sequence produce identical sample streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSeed(pub u64);

/// A deterministic random stream. Draw `n` is a fixed hash of
/// `(key, n)`, so streams are cheap to fork and replay.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    ctr: u64,
}

impl Stream {
    pub fn root(seed: RandomSeed) -> Self {
        Stream {
            key: mix64(seed.0.wrapping_add(GOLDEN)),
            ctr: 0,
        }
    }

    /// Child stream for `label`. Same `(parent key, label)` always gives the
    /// same child, independent of the parent's draw position.
    pub fn derive(&self, label: &str) -> Stream {
        Stream {
            key: mix64(self.key ^ hash_label(label)),
            ctr: 0,
        }
    }

    /// Indexed child stream, for derived trial loops.
    pub fn derive_indexed(&self, label: &str, index: u64) -> Stream {
        Stream {
            key: mix64(self.key ^ hash_label(label) ^ mix64(index.wrapping_add(GOLDEN))),
            ctr: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let n = self.ctr;
        self.ctr = n.wrapping_add(1);
        mix64(self.key.wrapping_add(n.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `{0, ..., n-1}`, unbiased via rejection.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }

    /// True with probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.f64() < p
    }

    /// Exponential with rate 1.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        -(1.0 - self.f64()).ln()
    }
}

/// Identifier of a base sample source, registered once per experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceId(pub u32);

/// Registry mapping source names to dense ids. Immutable after setup so it
/// can be shared across parallel trials.
#[derive(Debug, Clone, Default)]
pub struct SourceRegistry {
    names: Vec<String>,
}

impl SourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>) -> SourceId {
        let id = SourceId(self.names.len() as u32);
        self.names.push(name.into());
        id
    }

    pub fn name(&self, id: SourceId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Per-source draw counts. Counts are monotone non-decreasing; every base
/// draw increments exactly one counter by one.
#[derive(Debug, Clone, Default)]
pub struct SampleLedger {
    counts: Vec<u64>,
    total: u64,
}

impl SampleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn record(&mut self, id: SourceId) {
        let idx = id.0 as usize;
        if idx >= self.counts.len() {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += 1;
        self.total += 1;
    }

    pub fn count(&self, id: SourceId) -> u64 {
        self.counts.get(id.0 as usize).copied().unwrap_or(0)
    }

    /// Sum of all per-source counts.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Snapshot as `{source_name: count}`, for JSON reports.
    pub fn snapshot(&self, registry: &SourceRegistry) -> BTreeMap<String, u64> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (registry.name(SourceId(i as u32)).to_string(), c))
            .collect()
    }

    /// Merge counts from another ledger (used when aggregating parallel trials).
    pub fn absorb(&mut self, other: &SampleLedger) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

/// Cap on the total number of base draws an operation may perform. Exceeding
/// it aborts with [`Error::BudgetExceeded`] instead of returning an
/// approximate result, preserving the always-correct-output contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBudget(pub Option<u64>);

impl SampleBudget {
    pub const UNLIMITED: SampleBudget = SampleBudget(None);

    pub fn limited(max_draws: u64) -> Self {
        SampleBudget(Some(max_draws))
    }
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget::UNLIMITED
    }
}

/// Single-owner sampling context: one random stream, one ledger, one budget.
/// Independent trials run on distinct sessions and never share state.
#[derive(Debug, Clone)]
pub struct Session {
    rng: Stream,
    pub ledger: SampleLedger,
    budget: SampleBudget,
}

impl Session {
    pub fn new(rng: Stream, budget: SampleBudget) -> Self {
        Session {
            rng,
            ledger: SampleLedger::new(),
            budget,
        }
    }

    pub fn from_seed(seed: RandomSeed) -> Self {
        Session::new(Stream::root(seed), SampleBudget::UNLIMITED)
    }

    /// Meter one base draw from `id`, aborting if the budget would be exceeded.
    #[inline]
    pub fn meter(&mut self, id: SourceId) -> Result<()> {
        if let SampleBudget(Some(max)) = self.budget {
            if self.ledger.total() >= max {
                return Err(Error::BudgetExceeded {
                    drawn: self.ledger.total(),
                });
            }
        }
        self.ledger.record(id);
        Ok(())
    }

    /// The session stream; used both for base draws and for the combinators'
    /// unmetered internal randomness.
    #[inline]
    pub fn rng(&mut self) -> &mut Stream {
        &mut self.rng
    }

    pub fn budget(&self) -> SampleBudget {
        self.budget
    }
}

/// Convenience for the common "stream per trial" pattern.
pub fn derive_stream(seed: RandomSeed, label: &str) -> Stream {
    Stream::root(seed).derive(label)
}

/// Sum of all per-source counts in a ledger.
pub fn ledger_total(ledger: &SampleLedger) -> u64 {
    ledger.total()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefix(mut s: Stream, n: usize) -> Vec<u64> {
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_seed_same_label_replays() {
        let a = derive_stream(RandomSeed(42), "trial-0");
        let b = derive_stream(RandomSeed(42), "trial-0");
        assert_eq!(prefix(a, 64), prefix(b, 64));
    }

    #[test]
    fn different_labels_differ() {
        let a = derive_stream(RandomSeed(42), "trial-0");
        let b = derive_stream(RandomSeed(42), "trial-1");
        assert_ne!(prefix(a, 64), prefix(b, 64));
    }

    #[test]
    fn different_seeds_differ() {
        let a = derive_stream(RandomSeed(1), "x");
        let b = derive_stream(RandomSeed(2), "x");
        assert_ne!(prefix(a, 64), prefix(b, 64));
    }

    #[test]
    fn derivation_ignores_parent_position() {
        let mut parent = Stream::root(RandomSeed(7));
        let before = parent.derive("child");
        for _ in 0..100 {
            parent.next_u64();
        }
        let after = parent.derive("child");
        assert_eq!(prefix(before, 16), prefix(after, 16));
    }

    #[test]
    fn ledger_totals() {
        let mut reg = SourceRegistry::new();
        let a = reg.register("A");
        let b = reg.register("B");
        let mut ledger = SampleLedger::new();
        assert_eq!(ledger.total(), 0);
        for _ in 0..3 {
            ledger.record(a);
        }
        for _ in 0..5 {
            ledger.record(b);
        }
        assert_eq!(ledger.total(), 8);
        assert_eq!(ledger.count(a), 3);
        let snap = ledger.snapshot(&reg);
        assert_eq!(snap["A"], 3);
        assert_eq!(snap["B"], 5);
    }

    #[test]
    fn budget_aborts() {
        let mut reg = SourceRegistry::new();
        let a = reg.register("A");
        let mut s = Session::new(Stream::root(RandomSeed(0)), SampleBudget::limited(2));
        assert!(s.meter(a).is_ok());
        assert!(s.meter(a).is_ok());
        match s.meter(a) {
            Err(Error::BudgetExceeded { drawn }) => assert_eq!(drawn, 2),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn uniform_below_in_range() {
        let mut s = Stream::root(RandomSeed(3));
        for _ in 0..1000 {
            assert!(s.below(7) < 7);
        }
    }

    #[test]
    fn f64_in_unit_interval() {
        let mut s = Stream::root(RandomSeed(9));
        let mut mean = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let x = s.f64();
            assert!((0.0..1.0).contains(&x));
            mean += x;
        }
        mean /= n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
