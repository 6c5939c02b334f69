use thiserror::Error;

/// Errors surfaced by sampling algorithms and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Malformed input data (empty weight vector, inconsistent dimensions, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The sample budget would be exceeded; no approximate result is returned.
    #[error("sample budget exceeded after {drawn} base draws")]
    BudgetExceeded { drawn: u64 },

    /// A black-box oracle broke its contract (e.g. a valuation outside [0,1]).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Iterative solver failed to reach the requested accuracy.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// An internal invariant that should be unreachable was violated.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}
