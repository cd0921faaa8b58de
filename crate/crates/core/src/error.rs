use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank deficient {what}: reciprocal condition number {rcond:e}")]
    RankDeficient { what: String, rcond: f64 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error(
        "{count} instrument combinations exceed the configured cap of {cap}; \
         raise max_combinations to proceed"
    )]
    TooManyCombinations { count: u128, cap: usize },

    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid instrument set: {0}")]
    InvalidSet(String),

    #[error("cluster count {k} out of range 1..={leaves}")]
    ClusterCount { k: usize, leaves: usize },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
