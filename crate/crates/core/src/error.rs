use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("attention row {row} has no unmasked entries")]
    DegenerateAttention { row: usize },

    #[error("node {0} is not a scalar recorded on this tape")]
    NotOnTape(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("invalid token id {id} (vocabulary size {vocab_size})")]
    InvalidToken { id: usize, vocab_size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("customer {customer} has {sessions} session(s), at least {needed} required")]
    InsufficientHistory {
        customer: String,
        sessions: usize,
        needed: usize,
    },

    #[error("no history before pivot day {pivot_day}")]
    EmptyEncoder { pivot_day: i64 },

    #[error("every target position is padding")]
    AllPadded,

    #[error("empty history")]
    EmptyHistory,

    #[error("empty ground-truth basket")]
    EmptyBasket,

    #[error("unknown positional strategy {0:?}")]
    UnknownStrategy(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
