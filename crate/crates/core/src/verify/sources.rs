//! Synthetic sample sources with known true parameters.
//!
//! Construction and true-parameter access live here; everywhere else these
//! are passed around as `&dyn BitSource` / `&dyn RealSource`, so sampling
//! code cannot peek at the truth.

use crate::error::Error;
use crate::rng::{Session, SourceId, SourceRegistry};
use crate::sources::{BitSource, RealSource};
use crate::Result;

/// A coin with a fixed, known bias.
#[derive(Debug, Clone)]
pub struct SyntheticCoin {
    id: SourceId,
    bias: f64,
}

impl SyntheticCoin {
    pub fn register(reg: &mut SourceRegistry, name: impl Into<String>, bias: f64) -> Self {
        assert!((0.0..=1.0).contains(&bias), "coin bias must be in [0,1]");
        SyntheticCoin {
            id: reg.register(name),
            bias,
        }
    }

    /// True parameter; verification harness only.
    pub fn true_bias(&self) -> f64 {
        self.bias
    }
}

impl BitSource for SyntheticCoin {
    fn id(&self) -> SourceId {
        self.id
    }

    #[inline]
    fn flip(&self, s: &mut Session) -> Result<bool> {
        s.meter(self.id)?;
        Ok(s.rng().bernoulli(self.bias))
    }
}

/// A finite-support distribution on `[0,1]` with a known mean.
#[derive(Debug, Clone)]
pub struct SyntheticValues {
    id: SourceId,
    support: Vec<f64>,
    cdf: Vec<f64>,
}

impl SyntheticValues {
    pub fn register(
        reg: &mut SourceRegistry,
        name: impl Into<String>,
        support: Vec<f64>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidInput(
                "support and probabilities must be non-empty and equal length".into(),
            ));
        }
        if support.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("support values must lie in [0,1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("probabilities must sum to 1".into()));
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
        Ok(SyntheticValues {
            id: reg.register(name),
            support,
            cdf,
        })
    }

    pub fn point(reg: &mut SourceRegistry, name: impl Into<String>, value: f64) -> Result<Self> {
        SyntheticValues::register(reg, name, vec![value], vec![1.0])
    }

    /// True mean; verification harness only.
    pub fn true_mean(&self) -> f64 {
        let mut mean = 0.0;
        let mut prev = 0.0;
        for (v, c) in self.support.iter().zip(&self.cdf) {
            mean += v * (c - prev);
            prev = *c;
        }
        mean
    }
}

impl RealSource for SyntheticValues {
    fn id(&self) -> SourceId {
        self.id
    }

    #[inline]
    fn draw(&self, s: &mut Session) -> Result<f64> {
        s.meter(self.id)?;
        let u = s.rng().f64();
        let idx = self.cdf.partition_point(|c| *c < u);
        Ok(self.support[idx.min(self.support.len() - 1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSeed, SampleBudget, Stream};

    #[test]
    fn two_point_source_mean() {
        let mut reg = SourceRegistry::new();
        let src = SyntheticValues::register(&mut reg, "v", vec![0.2, 0.8], vec![0.5, 0.5]).unwrap();
        assert!((src.true_mean() - 0.5).abs() < 1e-15);
        let mut s = Session::new(Stream::root(RandomSeed(1)), SampleBudget::UNLIMITED);
        let n = 40_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += src.draw(&mut s).unwrap();
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
        assert_eq!(s.ledger.total(), n);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut reg = SourceRegistry::new();
        assert!(SyntheticValues::register(&mut reg, "a", vec![], vec![]).is_err());
        assert!(SyntheticValues::register(&mut reg, "b", vec![1.5], vec![1.0]).is_err());
        assert!(SyntheticValues::register(&mut reg, "c", vec![0.5], vec![0.7]).is_err());
    }
}
