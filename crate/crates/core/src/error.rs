use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate batch: need at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),

    #[error("no relevant items in ranking for query {0}")]
    NoRelevantItems(String),

    #[error("no evaluable queries")]
    NoEvaluableQueries,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty partition: no {0} samples to draw from")]
    EmptyPartition(&'static str),

    #[error("empty training set after holding out labels")]
    EmptyTraining,

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("record {id:?} (line {line}) has {found} values, expected {expected}")]
    DimensionMismatch {
        id: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("missing file {}", .0.display())]
    DanglingReference(PathBuf),

    #[error("unknown query id {0:?}")]
    UnknownQueryId(String),

    #[error("unknown label {0}")]
    UnknownLabel(usize),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
