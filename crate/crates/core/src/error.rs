use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (shapes, speeds, densities, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("loss became non-finite at local iteration {iteration} (learning rate {learning_rate})")]
    Divergence { iteration: usize, learning_rate: f64 },

    #[error("client {0} has no round-time history")]
    NoHistory(usize),

    #[error("unknown client {0}")]
    UnknownClient(usize),

    #[error("masks are not nested: submodel {position} is not a superset of its predecessor")]
    NotNested { position: usize },

    #[error("incomplete download: range needs {needed} packets, only {available} present")]
    MissingPackets { needed: usize, available: usize },

    #[error("event queue exhausted")]
    SimulationComplete,

    #[error("malformed packet: {0}")]
    Packet(String),

    #[error("missing run outputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingOutputs(Vec<PathBuf>),

    /// A runtime invariant of the simulation was violated.
    #[error("invariant breached: {0}")]
    Invariant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
