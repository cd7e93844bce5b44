//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("row {row}: dimension mismatch, expected {expected}, got {actual}")]
    RowDimensionMismatch {
        row: usize,
        expected: usize,
        actual: usize,
    },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("divergent trajectory at leapfrog step {step}")]
    Divergence { step: usize },

    #[error(
        "{percent:.0}% of transitions diverged; retry with a step size smaller than {step_size}"
    )]
    TooManyDivergences { percent: f64, step_size: f64 },

    #[error("chain contains no samples")]
    EmptyChain,

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("validation split is empty (n = {n}, fraction = {fraction})")]
    EmptyValidationSplit { n: usize, fraction: f64 },

    #[error("{context}: need at least {required} rows, got {actual}")]
    TooFewRows {
        context: &'static str,
        required: usize,
        actual: usize,
    },

    #[error("{context}: length mismatch, {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("k = {k} components exceeds min(n - 1, d) = {max} for {n} x {d} data")]
    InvalidComponentCount {
        k: usize,
        n: usize,
        d: usize,
        max: usize,
    },

    #[error("all grid cells failed: {0}")]
    AllCellsFailed(String),

    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] CsvError),

    #[error("artifact format: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// CSV ingestion failures. Rows and columns are 1-based and count the header
/// as row 1 so coordinates match what an editor shows.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("file is empty")]
    EmptyFile,

    #[error("missing header row (expected `id,target,...`)")]
    MissingHeader,

    #[error("row {row}: expected {expected} fields, got {actual}")]
    RaggedRow {
        row: usize,
        expected: usize,
        actual: usize,
    },

    #[error("row {row}, column {col}: cannot parse {value:?} as a decimal number")]
    NonNumericCell {
        row: usize,
        col: usize,
        value: String,
    },

    #[error("row {row}, column {col}: non-finite value")]
    NonFiniteCell { row: usize, col: usize },
}

impl Error {
    /// Coarse category used by the CLI for machine-parseable failure lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) | Error::Artifact(_) | Error::Json(_) => "data",
            Error::InvalidConfig(_)
            | Error::InvalidComponentCount { .. }
            | Error::EmptyValidationSplit { .. } => "config",
            Error::WithContext { source, .. } => source.category(),
            _ => "compute",
        }
    }

    /// Wraps the error with fold/family context.
    pub fn with_context(self, context: impl Into<String>) -> Error {
        Error::WithContext {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
