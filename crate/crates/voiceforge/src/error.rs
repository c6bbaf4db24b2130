use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate distribution: all samples identical")]
    DegenerateDistribution,

    #[error("invalid measurement: value is not finite")]
    InvalidMeasurement,

    #[error("incomplete phrase bank: missing variants for {0}")]
    IncompletePhraseBank(String),

    #[error("invalid rule {label:?}: {message}")]
    InvalidRule { label: String, message: String },

    #[error("corpus too large: {0}")]
    CorpusTooLarge(String),

    #[error("context overflow: sequence of {len} tokens exceeds context {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("no supervised positions: all loss weights are zero")]
    NoSupervisedPositions,

    #[error("divergence at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("empty query")]
    EmptyQuery,

    #[error("duplicate entry id {0:?}")]
    DuplicateEntryId(String),

    #[error("invalid k: k must be at least 1")]
    InvalidK,

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("index corrupt: {0}")]
    IndexCorrupt(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
