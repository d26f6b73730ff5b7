use std::path::PathBuf;

use crate::embed::SentenceRef;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("duplicate judgment for query {query:?}, document {doc:?}")]
    DuplicateJudgment { query: String, doc: String },

    #[error("bad magic bytes in vector file: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("vector dimension must be at least 1")]
    ZeroDim,

    #[error("row count mismatch: header declares {header} rows, {source_name} has {actual}")]
    CountMismatch {
        header: u64,
        actual: u64,
        source_name: &'static str,
    },

    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("manifest rows for {doc:?} are not contiguous and in sentence order (row {row})")]
    ManifestOrder { doc: String, row: usize },

    #[error("no embedding for sentence {0}")]
    MissingEmbedding(SentenceRef),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("unknown document {0:?}")]
    UnknownDoc(String),

    #[error("query {0:?} has no sentences")]
    EmptyQuery(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("no first-stage run for query {0:?}")]
    MissingRun(String),

    #[error("query {0:?} has no relevant judgments")]
    Unjudged(String),

    #[error("unsupported index file version {0}")]
    IndexVersion(u32),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    /// Whether the error comes from bad caller-supplied parameters rather than bad data.
    pub fn is_param_error(&self) -> bool {
        matches!(self, Error::InvalidParam(_))
    }
}
