use std::path::PathBuf;

use thiserror::Error;

use crate::control::ControlAttribute;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate item id `{0}` in items file")]
    DuplicateItem(String),

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("corpus is empty after preprocessing: {0}")]
    EmptyCorpus(String),

    #[error("invalid value for {attribute}: {value}")]
    InvalidAttributeValue { attribute: ControlAttribute, value: f64 },

    #[error("`{label}` is not a known {attribute} bucket label")]
    UnknownBucketLabel { attribute: ControlAttribute, label: String },

    #[error("no bucketing fitted for {0}")]
    MissingBucketing(ControlAttribute),

    #[error("invalid control scheme: {0}")]
    InvalidScheme(String),

    #[error("too many candidates for letter indexing: {0} > 26")]
    TooManyCandidates(usize),

    #[error("index {index} out of bounds for {len} candidates")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("catalogue has {available} items, fewer than K = {k}")]
    CatalogueTooSmall { available: usize, k: usize },

    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),

    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no training instance has a non-empty pair set")]
    NoTrainablePairs,

    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version { what: String, found: u32, expected: u32 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing artifact {path}; run `{stage}` first")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("{path} was written under config hash {found}, current config hashes to {expected}; rerun `{stage}`")]
    HashMismatch { stage: String, path: PathBuf, found: String, expected: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Format { what: what.into(), message: message.to_string() }
    }
}
