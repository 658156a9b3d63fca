use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("target column `{0}` not found in header")]
    MissingTarget(String),

    #[error("column `{column}` is not numeric (row {row}: `{value}`); enable categorical encoding to one-hot it")]
    NonNumericColumn {
        column: String,
        row: usize,
        value: String,
    },

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("dataset is empty or too small: {0}")]
    EmptyData(String),

    #[error("classification target must have at most two distinct labels, found {0}: {1:?}")]
    NonBinaryLabels(usize, Vec<String>),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("too few rows to split: {0}")]
    TooFewRows(String),

    #[error("invalid learner configuration: {0}")]
    InvalidLearner(String),

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("invalid minipatch configuration: {0}")]
    InvalidConfig(String),

    #[error("interaction order {order} unsupported (estimator supports at most {max})")]
    OrderUnsupported { order: usize, max: usize },

    #[error("feature set {0:?} is invalid (indices must be distinct and below the feature count)")]
    InvalidFeatureSet(Vec<usize>),

    #[error("no model was fitted excluding features {0:?}")]
    MissingExclusionModel(Vec<usize>),

    #[error(
        "insufficient minipatch coverage for row {row} excluding {excluded:?}: \
         {qualifying} qualifying patches (expected about {expected:.1}); increase B"
    )]
    InsufficientCoverage {
        row: usize,
        excluded: Vec<usize>,
        qualifying: usize,
        expected: f64,
    },

    #[error("closed form is only exact for unclipped monomial models")]
    ClippedModelUnsupported,

    #[error("minipatch dump is malformed: {0}")]
    BadDump(String),

    #[error("operation requires fitted models, but the ensemble was loaded from a dump")]
    ModelsUnavailable,

    #[error("{failed} of {total} replicates failed at {point}, above the 10% budget; first error: {first}")]
    ReplicateFailures {
        point: String,
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data or configuration rather than
    /// by an estimator at run time.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingTarget(_)
                | Error::NonNumericColumn { .. }
                | Error::MissingValue { .. }
                | Error::EmptyData(_)
                | Error::NonBinaryLabels(..)
                | Error::InvalidData(_)
                | Error::TooFewRows(_)
                | Error::InvalidLearner(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::InvalidFeatureSet(_)
                | Error::OrderUnsupported { .. }
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
