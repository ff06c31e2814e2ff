use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}{}: {message}", key.as_ref().map(|k| format!(" at key `{k}`")).unwrap_or_default(), line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: Option<String>,
        line: Option<usize>,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Solver(#[from] freehorizon::Error),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("checks failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Solver(freehorizon::Error::NoHittingTime { .. }) => "no_hitting_time",
            CliError::Solver(freehorizon::Error::SolverDiverged { .. }) => "solver_diverged",
            CliError::Solver(freehorizon::Error::SweepFailed { .. }) => "sweep_failed",
            CliError::Solver(_) => "solver",
            CliError::Argument(_) => "argument",
            CliError::ChecksFailed(_) => "checks_failed",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut error = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { key, line, .. } => {
                error["key"] = json!(key);
                error["line"] = json!(line);
            }
            CliError::Io { path, .. } => error["path"] = json!(path),
            CliError::ChecksFailed(names) => error["failed"] = json!(names),
            CliError::Solver(freehorizon::Error::SweepFailed { diagnostics }) => {
                error["horizons"] = json!(diagnostics);
            }
            _ => {}
        }
        json!({ "error": error })
    }
}
