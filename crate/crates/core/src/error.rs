use std::path::PathBuf;

use crate::Tick;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrix/vector shapes do not conform.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input value violates its documented domain (non-PSD covariance,
    /// negative probability, malformed scenario file, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Inversion failed or the innovation covariance is too badly conditioned.
    #[error("numerical error at tick {tick}: {msg}")]
    Numerical { tick: Tick, msg: String },

    /// A measurement is older than the available step history.
    #[error("stale measurement: origin tick {origin} is {delay} ticks old, history depth is {depth}")]
    StaleMeasurement { origin: Tick, delay: u64, depth: usize },

    /// Caller broke an ordering or tick-consistency precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn numerical(tick: Tick, msg: impl Into<String>) -> Self {
        Error::Numerical {
            tick,
            msg: msg.into(),
        }
    }
}
