use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: axis {axis} expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        found: usize,
    },

    #[error("empty evidence: attention row {row} has no valid key positions")]
    EmptyEvidence { row: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("causality violation: {0}")]
    Causality(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("referential integrity: unknown {what} ids {ids:?}")]
    Integrity { what: &'static str, ids: Vec<u64> },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error in row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("embedding coverage: missing {what} ids {ids:?}")]
    Coverage { what: &'static str, ids: Vec<usize> },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
