//! Error type shared by all modules.
//!
//! Diagnostic payloads are carried as `f64` regardless of the scalar the
//! computation ran in; they are for reporting, not further arithmetic.

use crate::utility::ValueRange;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument left the domain of the operation (`c <= 0`, `beta` outside
    /// `(0,1)`, ...).
    #[error("domain error: {what} = {value}, requires {requires}")]
    Domain {
        what: &'static str,
        value: f64,
        requires: &'static str,
    },

    /// A requested utility value lies outside the range of the configured
    /// family, i.e. no consumption level attains it.
    #[error("range error: value {value} is outside the utility range {range}")]
    Range { value: f64, range: ValueRange },

    /// Structurally invalid input (mismatched lengths, income not in the
    /// support, malformed problem data).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A type-level invariant failed at construction time.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The weight recursion produced a continuation value no weight can
    /// deliver. Clamping is deliberately not offered: it would break the
    /// martingale property of the contract values.
    #[error(
        "mechanism infeasible at income state {income}: continuation value {value} \
         is outside the utility range"
    )]
    Infeasible { income: f64, value: f64 },

    /// The linear operator is not a contraction in the 1-norm.
    #[error("contraction violation: operator 1-norm {norm} >= 1")]
    ContractionViolation { norm: f64 },

    /// An iterative solver ran out of its iteration budget.
    #[error("no convergence after {iterations} iterations (last residual {residual})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A cross-sectional statistic was requested for a period with no
    /// surviving agents.
    #[error("statistics error: empty cross-section at period {period}")]
    EmptyCrossSection { period: u32 },
}
