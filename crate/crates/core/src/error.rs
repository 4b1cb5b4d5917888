//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Backend,
    Integrity,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- data / ingestion ---
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: missing or empty field `{field}`")]
    MissingField {
        path: String,
        line: usize,
        field: &'static str,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // --- configuration ---
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid value for {param}: {message}")]
    InvalidValue { param: String, message: String },
    #[error("template {template}: no binding for placeholder {{{name}}}")]
    MissingBinding { template: String, name: String },
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },

    // --- model gateway ---
    #[error("backend {backend} unreachable: {message}")]
    BackendUnreachable { backend: String, message: String },
    #[error("backend {backend} returned no token log-probabilities")]
    LogprobsMissing { backend: String },
    #[error("mock script has no rule matching request (prompt starts {prompt_head:?}, image {image:?})")]
    MockUnmatched {
        prompt_head: String,
        image: Option<String>,
    },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },

    // --- integrity ---
    #[error("cache entry {digest} is corrupt")]
    CacheCorrupt { digest: String },
    #[error("index integrity error: {0}")]
    IndexIntegrity(String),

    // --- retrieval / reasoning ---
    #[error("knowledge index is empty")]
    EmptyIndex,
    #[error("keyword reply contained no usable keywords")]
    EmptyKeywords,
    #[error("completion has no answer tokens")]
    NoTokens,
    #[error("sample {0:?} has no entry in the neighbors file")]
    NeighborsMissing(String),
    #[error("neighbors of {sample_id:?} list {example_id:?}, which is not in the example pool")]
    UnknownNeighbor { sample_id: String, example_id: String },
    #[error("example pool is empty")]
    EmptyPool,
    #[error("sample has no gold annotations")]
    NoAnnotations,
    #[error("sample {sample_id:?} failed: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::InvalidValue { .. }
            | Error::MissingBinding { .. }
            | Error::UnknownPlaceholder { .. } => ErrorClass::Config,
            Error::BackendUnreachable { .. }
            | Error::LogprobsMissing { .. }
            | Error::MockUnmatched { .. }
            | Error::InvalidResponse(_) => ErrorClass::Backend,
            Error::CacheCorrupt { .. } | Error::IndexIntegrity(_) => ErrorClass::Integrity,
            Error::Sample { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Strips `Sample` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}
