//! Oracles, statistics, and mechanism audits.
//!
//! This is the verification side of the crate: closed-form target
//! distributions, goodness-of-fit checks, an exact assignment solver, and
//! audits for incentive properties. It is the only module that constructs
//! sample sources with *readable* true parameters — the sampling algorithms
//! themselves only ever receive those sources as black-box trait objects.

pub mod audits;
pub mod flow;
pub mod maximizers;
pub mod oracles;
pub mod sources;
pub mod stats;
pub mod suites;

pub use audits::AuditReport;
pub use oracles::{exact_exp_weights, exact_linear_weights};
pub use stats::{chi_square_check, tv_distance, DistributionReport};
