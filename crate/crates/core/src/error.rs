use thiserror::Error;

use crate::data::ItemId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid pair ({0}, {1}): items must be distinct and in range")]
    InvalidPair(ItemId, ItemId),

    #[error("information matrix is rank deficient: {deficient} of {dim} directions unidentified")]
    RankDeficient { deficient: usize, dim: usize },

    #[error("covariance factorization failed after {attempts} jitter attempts")]
    Factorization { attempts: usize },

    #[error("no eligible pairs remain")]
    Exhausted,

    #[error("no annotations remain for pair ({0}, {1})")]
    PairExhausted(ItemId, ItemId),

    #[error("split requires at least 4 items, got {0}")]
    Split(usize),

    #[error("tied comparison between items {0} and {1}")]
    Tie(ItemId, ItemId),

    #[error("step grids do not align: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("session {0} not found")]
    SessionNotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
