use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world spec: `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("cannot generate {phenomenon} for attribute `{attribute}`: {reason}")]
    Generation {
        attribute: String,
        phenomenon: String,
        reason: String,
    },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("input length {len} exceeds max_input_len {max}")]
    InputTooLong { len: usize, max: usize },

    #[error("decoder prefix length {len} exceeds max_output_len {max}")]
    PrefixTooLong { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value set violates canonical form: {0}")]
    InvalidValueSet(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("need at least 2 PACs to split, got {0}")]
    TooFewPacs(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate classifier for {pac}: {reason}")]
    Degenerate { pac: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
