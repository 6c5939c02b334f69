//! Monte Carlo audits of mechanism properties.

use serde::Serialize;

use crate::rng::{SampleBudget, Session, Stream};
use crate::urns::{OutcomeId, TypeRef, UrnEnvironment, ValueTable};
use crate::verify::oracles::exact_exp_weights;
use crate::verify::stats::{chi_square_check, mean_se, tv_distance, DistributionReport};
use crate::Result;

/// One audited quantity with its decision.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl AuditReport {
    /// Pass iff `estimate ≥ threshold − 3·SE`.
    pub fn at_least(name: impl Into<String>, estimate: f64, se: f64, threshold: f64) -> Self {
        AuditReport {
            name: name.into(),
            estimate,
            std_error: se,
            threshold,
            pass: estimate >= threshold - 3.0 * se,
        }
    }

    /// Pass iff `|estimate − threshold| ≤ 3·SE`.
    pub fn within(name: impl Into<String>, estimate: f64, se: f64, threshold: f64) -> Self {
        AuditReport {
            name: name.into(),
            estimate,
            std_error: se,
            threshold,
            pass: (estimate - threshold).abs() <= 3.0 * se,
        }
    }
}

/// A direct-revelation single-agent mechanism under audit: maps a report to
/// a realized outcome and a payment sample.
pub trait ReportMechanism {
    fn run(&self, report: &TypeRef, s: &mut Session) -> Result<(OutcomeId, f64)>;
}

impl<F> ReportMechanism for F
where
    F: Fn(&TypeRef, &mut Session) -> Result<(OutcomeId, f64)>,
{
    fn run(&self, report: &TypeRef, s: &mut Session) -> Result<(OutcomeId, f64)> {
        self(report, s)
    }
}

/// Estimated truth-telling margins `u(t→t) − u(t→t')` for every pair on the
/// grid, by paired Monte Carlo (both arms replay the same per-trial stream).
/// The returned report carries the *minimum* margin; the mechanism passes
/// the audit when that margin is not significantly negative.
pub fn ic_audit(
    mechanism: &dyn ReportMechanism,
    values: &ValueTable,
    truths: &[TypeRef],
    reports: &[TypeRef],
    trials: u64,
    stream: &Stream,
    budget: SampleBudget,
) -> Result<AuditReport> {
    let mut worst: Option<AuditReport> = None;
    for (ti, truth) in truths.iter().enumerate() {
        for (ri, report) in reports.iter().enumerate() {
            if truth == report {
                continue;
            }
            let mut diffs = Vec::with_capacity(trials as usize);
            for trial in 0..trials {
                let sub = stream.derive_indexed(&format!("ic-{ti}-{ri}"), trial);
                let mut s_truth = Session::new(sub.clone(), budget);
                let (o_t, p_t) = mechanism.run(truth, &mut s_truth)?;
                let mut s_report = Session::new(sub, budget);
                let (o_r, p_r) = mechanism.run(report, &mut s_report)?;
                let u_t = values.value(truth, o_t)? - p_t;
                let u_r = values.value(truth, o_r)? - p_r;
                diffs.push(u_t - u_r);
            }
            let (mean, se) = mean_se(&diffs);
            let cand = AuditReport::at_least(
                format!("ic-margin[t{}->t{}]", truth.index, report.index),
                mean,
                se,
                0.0,
            );
            let replace = match &worst {
                None => true,
                Some(w) => cand.estimate - 3.0 * cand.std_error < w.estimate - 3.0 * w.std_error,
            };
            if replace {
                worst = Some(cand);
            }
        }
    }
    worst.ok_or_else(|| crate::error::Error::InvalidInput("empty audit grid".into()))
}

/// Outcome of a stationarity audit: uniformity of the winning surrogate
/// index and total-variation of the selected type against the prior.
#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub index_report: DistributionReport,
    pub type_tv: f64,
    pub type_tv_threshold: f64,
    pub pass: bool,
}

/// Audit a surrogate-selection rule: over repeated runs, the selected
/// surrogate index must be uniform on `{0..m-1}` and the selected type must
/// reproduce the prior.
pub fn stationarity_audit(
    mut select: impl FnMut(&mut Session) -> Result<(usize, usize)>,
    m: usize,
    prior_support: &[usize],
    prior_probs: &[f64],
    trials: u64,
    tv_threshold: f64,
    significance: f64,
    stream: &Stream,
    budget: SampleBudget,
) -> Result<StationarityReport> {
    let mut index_counts = vec![0u64; m];
    let mut type_counts = vec![0u64; prior_support.len()];
    for trial in 0..trials {
        let mut s = Session::new(stream.derive_indexed("stationarity", trial), budget);
        let (jstar, type_index) = select(&mut s)?;
        index_counts[jstar] += 1;
        let slot = prior_support
            .iter()
            .position(|t| *t == type_index)
            .ok_or_else(|| {
                crate::error::Error::InvariantViolation(format!(
                    "selected type {type_index} outside the prior support"
                ))
            })?;
        type_counts[slot] += 1;
    }
    let uniform = vec![1.0 / m as f64; m];
    let index_report = chi_square_check(&index_counts, &uniform, significance)?;
    let freqs: Vec<f64> = type_counts
        .iter()
        .map(|c| *c as f64 / trials as f64)
        .collect();
    let type_tv = tv_distance(&freqs, prior_probs);
    let pass = index_report.pass && type_tv <= tv_threshold;
    Ok(StationarityReport {
        index_report,
        type_tv,
        type_tv_threshold: tv_threshold,
        pass,
    })
}

/// Check the implicit-payment identity on an urn environment: the Monte
/// Carlo mean of payment samples must match
/// `v(t, x(t)) − ∫₀¹ v(t, x(λt)) dλ` computed by trapezoid quadrature on the
/// exact allocation marginals.
pub fn payment_identity_audit(
    env: &UrnEnvironment,
    t: &TypeRef,
    eps: f64,
    trials: u64,
    grid_points: usize,
    stream: &Stream,
    budget: SampleBudget,
) -> Result<AuditReport> {
    let m = env.num_urns();
    let means = env.true_urn_means(t)?;
    let quadrature = if m == 1 {
        0.0
    } else {
        let rate = crate::urns::exp_weights_rate(m, eps)?;
        let welfare_at = |scale: f64| -> Result<f64> {
            let scaled: Vec<f64> = means.iter().map(|v| scale * v).collect();
            let marginals = exact_exp_weights(&scaled, rate)?;
            Ok(marginals.iter().zip(&means).map(|(x, v)| x * v).sum())
        };
        let mut integral = 0.0;
        let h = 1.0 / (grid_points - 1) as f64;
        for g in 0..grid_points {
            let w = if g == 0 || g == grid_points - 1 { 0.5 } else { 1.0 };
            integral += w * welfare_at(g as f64 * h)?;
        }
        integral *= h;
        welfare_at(1.0)? - integral
    };

    let mut samples = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let mut s = Session::new(stream.derive_indexed("payment", trial), budget);
        samples.push(crate::urns::charge(env, *t, eps, &mut s)?);
    }
    let (mean, se) = mean_se(&samples);
    Ok(AuditReport::within(
        format!("payment-identity[t{}]", t.index),
        mean,
        se,
        quadrature,
    ))
}
