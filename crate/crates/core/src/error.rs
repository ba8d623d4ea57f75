use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the backend.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),

    #[error("line {line}: unknown utterance id `{id}`")]
    MissingReference { line: usize, id: String },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("need at least 2 speakers, found {0}")]
    InsufficientClasses(usize),

    #[error("degenerate scatter: {0}")]
    DegenerateScatter(&'static str),

    #[error("model is unidentifiable: no speaker has two or more utterances")]
    Unidentifiable,

    #[error("ill-conditioned {what}{}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    IllConditioned {
        what: &'static str,
        iteration: Option<usize>,
    },

    #[error("matrix is not negative semi-definite (largest eigenvalue {0:e})")]
    NotNsd(f64),

    #[error("vector norm is too close to zero to normalize")]
    ZeroVector,

    #[error("degenerate batch: {0}")]
    DegenerateBatch(&'static str),

    #[error("score set needs at least one target and one non-target trial")]
    DegenerateLabels,

    #[error("invalid detection costs: c_miss and c_fa must be non-negative and not both zero")]
    InvalidCost,

    #[error("non-finite gradient for parameter {0}")]
    NonFinite(String),

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
