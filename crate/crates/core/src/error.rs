use thiserror::Error;

/// Errors raised by the solvers and model evaluators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("bisection failed: {0}")]
    BisectionFailure(String),

    #[error("budget {budget} unreachable: components still sum to {sum} at the largest multiplier")]
    BudgetUnreachable { budget: f64, sum: f64 },

    #[error("starting point is infeasible: {0}")]
    InfeasibleStart(String),

    #[error("problem dimension {got} exceeds the oracle limit {limit}")]
    DimensionTooLarge { got: usize, limit: usize },

    #[error("rounded association violates the SBS budget after repair (residual {residual:e})")]
    RoundingInfeasible { residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
