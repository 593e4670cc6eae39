use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("observation {index} has no risk label")]
    Unlabeled { index: usize },

    #[error("{}", missing_columns_message(.0))]
    MissingColumns(Vec<String>),

    #[error("row {row}: bad label token {token:?}")]
    BadLabel { row: usize, token: String },

    #[error("row {row}: cannot parse {field} value {value:?}")]
    BadNumeric {
        row: usize,
        field: &'static str,
        value: String,
    },

    #[error("row {row}: cannot parse timestamp {value:?}")]
    BadTimestamp { row: usize, value: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    FormatVersion {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("empty row list")]
    EmptyRows,

    #[error("feature {0} is missing in every statistics row")]
    FeatureAllMissing(&'static str),

    #[error("class {0} has fewer than {1} members")]
    ClassTooSmall(&'static str, usize),

    #[error("folds must be ≥ 2")]
    TooFewFolds,

    #[error("training data contains a single class")]
    SingleClass,

    #[error("gini impurity undefined for an empty node")]
    EmptyNode,

    #[error("no term survives the document-frequency cutoff")]
    EmptyVocabulary,

    #[error("probability vector {0:?} does not sum to 1")]
    NotAProbability([f64; 2]),

    #[error("training diverged to a non-finite loss at epoch {0}")]
    Diverged(usize),

    #[error("pipeline component not fitted: {0}")]
    NotFitted(&'static str),

    #[error("empty sample set")]
    EmptySamples,

    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unsupported synthetic spec: {0}")]
    UnsupportedSpec(String),
}

fn missing_columns_message(cols: &[String]) -> String {
    cols.iter()
        .map(|c| format!("missing column: {c}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
