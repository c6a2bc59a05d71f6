use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto exit codes
/// (parse/format -> 2, config -> 3, capability -> 4, schema -> 5).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("model capability error: {0}")]
    Capability(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("empty vocabulary: every covariate was pruned")]
    EmptyVocabulary,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
