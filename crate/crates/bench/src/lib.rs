//! Benchmark harness for carrier-graph navigation: scenario generation,
//! suite execution under ablation variants, metrics, and an optional
//! language-model prior.

pub mod llm;
pub mod metrics;
pub mod scenario;
pub mod suite;

pub use crsg_core::policy::EpisodeResult;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("language model adapter: {0}")]
    Llm(String),
    #[error(transparent)]
    Core(#[from] crsg_core::Error),
}

impl BenchError {
    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use crsg_core::Error as E;
        match self {
            BenchError::Invalid(_) | BenchError::Capacity(_) | BenchError::Metric(_) => 1,
            BenchError::Core(E::Parse(_) | E::Validation(_) | E::DimensionMismatch { .. } | E::Io { .. }) => 1,
            BenchError::Io(..) => 1,
            BenchError::Llm(_) | BenchError::Core(_) => 2,
        }
    }
}
