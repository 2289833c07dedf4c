use std::io;

use thiserror::Error;

use crate::geo::CellId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain an operation accepts (latitude beyond the
    /// Mercator limit, grid index outside the 32-bit biased range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structural problem with an input file: header, arity, or a row that
    /// fails to parse in strict mode.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("vocabulary is empty after applying min_count = {min_count}")]
    EmptyVocab { min_count: u64 },

    #[error("cell {0} is not in the vocabulary")]
    NotInVocab(CellId),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("x has zero variance; regression is undefined")]
    ZeroVariance,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            msg: msg.into(),
        }
    }
}
