//! Exact sampling from functions of unknown means.
//!
//! Everything here works in a black-box sampling model: algorithms may draw
//! from input distributions (coins with unknown biases, value distributions
//! supported on `[0,1]`) but never read their parameters. On top of the
//! sampling primitives sit two mechanism-design layers and a verification
//! harness:
//!
//! - [`rng`]: deterministic counter-based random streams, the sample ledger
//!   that meters every base draw, and sampling budgets.
//! - [`factory`]: coin combinators (scaling, doubling, probability generating
//!   functions, exponentiation, averaging, addition) that build new coins
//!   from old ones with exactly the target bias.
//! - [`races`]: exact selection with linear and exponential weights given
//!   only sample access to the weights.
//! - [`urns`]: a truthful allocation mechanism over sampled urns, with
//!   implicit payments.
//! - [`matching`]: entropy-regularized replica-surrogate matching, its online
//!   primal-dual solver, and the incentive-compatible black-box reduction.
//! - [`verify`]: closed-form oracles, goodness-of-fit statistics, an exact
//!   assignment solver, and mechanism audits. This is the only module that
//!   reads the true parameters of synthetic sources.

pub mod error;
pub mod factory;
pub mod matching;
pub mod races;
pub mod rng;
pub mod sources;
pub mod urns;
pub mod verify;

pub use error::Error;
pub use rng::{RandomSeed, SampleBudget, SampleLedger, Session, SourceId, SourceRegistry, Stream};

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
