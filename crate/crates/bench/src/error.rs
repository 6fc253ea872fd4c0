use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] doping_core::Error),
    #[error("invalid benchmark: {0}")]
    Invalid(String),
    #[error("MAC mismatch for {name}: formula {formula}, instrumented {counted}")]
    MacMismatch { name: String, formula: u64, counted: u64 },
    #[error("nothing to report")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
