use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range in {op} (limit {limit})")]
    Index {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("singular system in {solve} (pivot {pivot})")]
    Singular { solve: String, pivot: usize },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("graph is disconnected: component sizes {sizes:?}")]
    Disconnected { sizes: Vec<usize> },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("incompatible: {0}")]
    Incompatible(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures that originate in the numerics rather than in the
    /// inputs (used by the CLI to pick an exit code).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
