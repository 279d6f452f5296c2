use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index error: {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("lineage error: init fingerprints differ ({expected:016x} vs {found:016x})")]
    Lineage { expected: u64, found: u64 },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("score undefined: {0}")]
    UndefinedScore(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("training error: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front-end.
    ///
    /// 1 = usage / configuration, 2 = data, 3 = numeric or training failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape(_)
            | Error::Length { .. }
            | Error::Data(_)
            | Error::Parse { .. }
            | Error::Lineage { .. }
            | Error::Coverage(_)
            | Error::UndefinedScore(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => 2,
            Error::Dimension { .. }
            | Error::Index { .. }
            | Error::Contract(_)
            | Error::NonFinite { .. }
            | Error::Training(_) => 3,
        }
    }
}
