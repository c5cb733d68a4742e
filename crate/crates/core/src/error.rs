use thiserror::Error;

use crate::time_picard::PicardTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    #[error("decomposition failure: {0}")]
    DecompositionFailure(String),

    #[error("Picard iteration did not converge within {max_iterations} iterations at step {step}")]
    NonConvergence {
        step: usize,
        max_iterations: usize,
        trace: Box<PicardTrace>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An internal bookkeeping invariant was broken.
    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Parse(_) => 2,
            Error::SolverFailure(_)
            | Error::DecompositionFailure(_)
            | Error::NonConvergence { .. } => 3,
            _ => 1,
        }
    }
}
