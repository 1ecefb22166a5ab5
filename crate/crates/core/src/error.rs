use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation diverged at hour {hour}: zone temperature {temp} outside [0, 60] C")]
    SimulationDiverged { hour: usize, temp: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("malformed {what}: field `{field}`: {reason}")]
    Deserialize {
        what: &'static str,
        field: String,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("optimization failed: all {0} candidates produced non-finite costs")]
    OptimizationFailed(usize),

    #[error("episode aborted at timestep {timestamp}: {source}")]
    AtTimestep {
        timestamp: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("corrupt episode line {line}: {reason}")]
    CorruptLine { line: usize, reason: String },

    #[error("render error: unfilled placeholders: {}", .0.join(", "))]
    Render(Vec<String>),

    #[error("gateway error: HTTP status {status}")]
    Gateway { status: u16 },

    #[error("gateway timeout after {0:.1} s")]
    Timeout(f64),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad flags, configuration or inputs rather
    /// than by a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Schema(_)
                | Error::Config(_)
                | Error::Domain(_)
                | Error::Deserialize { .. }
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
