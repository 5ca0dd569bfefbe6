use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown entity type `{0}`")]
    UnknownType(String),

    #[error("invalid IOB sequence: {0}")]
    InvalidIob(String),

    #[error("invalid type set: {0}")]
    TypeSet(String),

    #[error("no mapping given for entity type `{0}`")]
    UnmappedType(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sentence {index}: {msg}")]
    Misaligned { index: usize, msg: String },

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (true={loss_true}, noisy={loss_noisy})"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss_true: f64,
        loss_noisy: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bad model file: {0}")]
    Format(String),

    #[error("context tagger unusable: {0}")]
    Tagger(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
