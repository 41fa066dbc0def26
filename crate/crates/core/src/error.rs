use std::path::PathBuf;

use crate::nn::WeightId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite {what} at training step {step}")]
    NonFinite { step: u64, what: &'static str },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: truncated file, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: checksum mismatch, expected {expected}, found {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("weight {weight} is not tracked by the ledger (tracked layers: {tracked_layers:?})")]
    UntrackedWeight {
        weight: WeightId,
        tracked_layers: Vec<usize>,
    },

    #[error("layer {layer} is not tracked (tracked layers: {tracked_layers:?})")]
    UntrackedLayer {
        layer: usize,
        tracked_layers: Vec<usize>,
    },

    #[error(
        "ledger of {entries} accumulator entries ({tracked} weights x {n} examples x 3) exceeds cap of {cap}"
    )]
    LedgerTooLarge {
        entries: usize,
        tracked: usize,
        n: usize,
        cap: usize,
    },

    #[error("ledger was produced for model {ledger_digest}, but the network digest is {model_digest}")]
    StaleLedger {
        ledger_digest: String,
        model_digest: String,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("evaluation undefined: {0}")]
    Evaluation(String),

    #[error("explanation failed for queries {0:?}")]
    ExplanationFailed(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
