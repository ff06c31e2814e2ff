use thiserror::Error;

use crate::ilqr::SolveResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state produced at step {step}")]
    NumericOverflow { step: usize },

    #[error("solver diverged after {iterations} iterations (regularization exhausted)")]
    SolverDiverged {
        iterations: usize,
        last: Box<SolveResult>,
    },

    #[error("every horizon in the sweep failed to solve")]
    SweepFailed { diagnostics: Vec<(usize, String)> },

    #[error("no swept horizon up to T = {t_max} entered the terminal set (M = {level}); enlarge the horizon budget")]
    NoHittingTime { t_max: usize, level: f64 },

    #[error("oracle failed: {0}")]
    OracleFailed(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
