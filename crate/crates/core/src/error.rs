use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("IDX parse error at byte offset {offset}: {message}")]
    IdxParse { offset: usize, message: String },

    #[error("class {class} has {available} samples, protocol needs more than {requested}")]
    InsufficientSamples {
        class: usize,
        requested: usize,
        available: usize,
    },

    #[error("no positive pairs: source and target label sets are disjoint")]
    NoPositivePairs,

    #[error("cannot form multi-class batches: {0}")]
    SingleClass(String),

    #[error("forward cache is stale or missing: {0}")]
    StaleCache(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("network spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(
    context: &'static str,
    expected: impl std::fmt::Debug,
    found: impl std::fmt::Debug,
) -> Error {
    Error::DimensionMismatch {
        context,
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}
