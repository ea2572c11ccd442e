//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `<J_x>` is too small to normalise a squeezing parameter by.
    #[error("degenerate orientation: <Jx> = {jx:e} is too small to normalise by")]
    DegenerateOrientation { jx: f64 },

    /// Kurtosis requested along an axis with zero variance.
    #[error("undefined kurtosis: variance along {axis} is zero")]
    UndefinedKurtosis { axis: &'static str },

    /// A bracketed root search found no sign change.
    #[error("{equation}: no root in [{lo:e}, {hi:e}] (f(lo) = {f_lo:e}, f(hi) = {f_hi:e})")]
    NoRoot {
        equation: &'static str,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    /// A failure while building step `step` (1-based) of a twist schedule.
    #[error("schedule step {step}: {source}")]
    ScheduleStep { step: usize, source: Box<Error> },

    /// An ensemble allocation produced an ensemble that is too small.
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    /// Exact evaluation would exceed the configured branch budget.
    #[error("exact evaluation needs ~{terms:e} branch terms, budget is {budget:e}; use Monte Carlo mode")]
    BranchBudget { terms: f64, budget: f64 },

    /// A fit could not be carried out.
    #[error("fit failed: {0}")]
    Fit(String),
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
