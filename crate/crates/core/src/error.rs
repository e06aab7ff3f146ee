use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("feature dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero-norm feature vector")]
    ZeroNorm,

    #[error("graph has no objects to query")]
    EmptyGraph,

    #[error("unknown object id {0}")]
    UnknownObject(String),

    #[error("unknown carrier id {0}")]
    UnknownCarrier(String),

    #[error("no reachable free cell near ({0:.3}, {1:.3})")]
    Unreachable(f64, f64),

    #[error("no free spot on carrier {0}")]
    NoFreeSpot(String),

    #[error("stale action: {0}")]
    StaleAction(String),

    #[error("oracle failure: {0}")]
    Oracle(String),
}
