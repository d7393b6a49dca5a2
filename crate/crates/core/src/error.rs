use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("energy {energy_mev} MeV outside attenuation table range [{min_mev}, {max_mev}] MeV")]
    EnergyOutOfRange {
        energy_mev: f64,
        min_mev: f64,
        max_mev: f64,
    },

    #[error("event stream is not sorted by time (event {index} at {time_s} s)")]
    UnsortedEvents { index: usize, time_s: f64 },

    #[error("frequency grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not enough pulse-free records for the noise PSD: {found} < {required}")]
    InsufficientNoiseRecords { found: usize, required: usize },

    #[error("coincidence peak not significant: {significance:.2} sigma < {required} sigma")]
    InsufficientSignificance { significance: f64, required: f64 },

    #[error("fit did not converge: {0}")]
    FitFailed(String),

    #[error("livetime mismatch: simulation {simulated_s} s vs records {recorded_s} s")]
    LivetimeMismatch { simulated_s: f64, recorded_s: f64 },

    #[error("file format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("incompatible schema: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
