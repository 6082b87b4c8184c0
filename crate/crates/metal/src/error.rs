//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("dataset is empty; collect real transitions before training")]
    EmptyDataset,

    #[error("segment too short: need at least {needed} states, got {got}")]
    SegmentTooShort { needed: usize, got: usize },

    #[error("need at least {needed} model snapshots, got {got}")]
    TooFewSnapshots { needed: usize, got: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
