use thiserror::Error;

/// Errors produced by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Trimming, spacing or regime-length constraints cannot be met.
    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
