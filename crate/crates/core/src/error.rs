use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("line {line}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { line: u64, timestamp: String },

    #[error("line {line}: spacing violation ({gap_steps} missing steps after {after})")]
    Spacing {
        line: u64,
        after: String,
        gap_steps: i64,
    },

    #[error("line {line}: non-finite value")]
    NonFinite { line: u64 },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("series too short: {len} observations, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("insufficient history: target index {t} needs lag {lag}")]
    InsufficientHistory { t: usize, lag: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("booster state not initialized")]
    Uninitialized,

    #[error("booster step out of order: expected step {expected}, got {actual}")]
    StepOutOfOrder { expected: usize, actual: usize },

    #[error("missing initialization context: {0}")]
    MissingContext(&'static str),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_)
            | Error::MalformedRow { .. }
            | Error::DuplicateTimestamp { .. }
            | Error::Spacing { .. }
            | Error::NonFinite { .. }
            | Error::InvalidSeries(_)
            | Error::TooShort { .. }
            | Error::InsufficientHistory { .. } => "data",
            Error::ShapeMismatch { .. } | Error::Format(_) | Error::Divergence(_) => "model",
            Error::InvalidGains(_)
            | Error::Uninitialized
            | Error::StepOutOfOrder { .. }
            | Error::MissingContext(_) => "booster",
            Error::Config(_) | Error::InvalidArgument(_) => "config",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "data" => 4,
            "model" => 5,
            "booster" => 6,
            _ => 1,
        }
    }
}
