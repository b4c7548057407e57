//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row ({state}, {action}) not stochastic: sums to {sum}")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },
    #[error("policy row ({state}, goal {goal}) not a distribution: sums to {sum}")]
    InvalidPolicyRow { state: usize, goal: usize, sum: f64 },
    #[error("empty goal set")]
    EmptyGoalSet,
    #[error("discount {0} outside (0, 1)")]
    BadDiscount(f64),
    #[error("index out of range: {what} = {value}, limit {limit}")]
    IndexOutOfRange { what: &'static str, value: usize, limit: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("state space too large: {size} states exceeds cap {cap}")]
    SpecTooLarge { size: usize, cap: usize },
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("infeasible transport input: {0}")]
    InfeasibleTransport(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("analogy delta inapplicable after {retries} retries")]
    DeltaInapplicable { retries: usize },
    #[error("metric form mismatch: {0}")]
    FormMismatch(String),
    #[error("policy input mode mismatch: {0}")]
    InputModeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit-code classification for the CLI: validation failures exit 1,
    /// runtime failures exit 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonStochasticRow { .. }
                | Error::InvalidPolicyRow { .. }
                | Error::EmptyGoalSet
                | Error::BadDiscount(_)
                | Error::IndexOutOfRange { .. }
                | Error::ShapeMismatch(_)
                | Error::SpecTooLarge { .. }
                | Error::FormMismatch(_)
                | Error::InputModeMismatch(_)
                | Error::InvalidConfig(_)
                | Error::MissingCheckpoint(_)
        )
    }
}
