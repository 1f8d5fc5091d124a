use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear system is singular")]
    Singular,

    #[error("empty batch")]
    EmptyBatch,

    #[error("episode is over; reset the environment before stepping")]
    EpisodeOver,

    #[error("invalid action {action} for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("adaptive rate `{0}` queried before any statistics update")]
    RateNotReady(&'static str),

    #[error("trace is missing error records at iteration {0}")]
    MissingErrorRecords(usize),

    #[error("undefined normalization: reference curve sums to zero")]
    ZeroReference,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch { expected: expected.to_string(), actual: actual.to_string() }
}
