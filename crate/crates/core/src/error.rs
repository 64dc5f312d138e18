use thiserror::Error;

use crate::model::Triplet;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid triplet {triplet:?}: {reason}")]
    InvalidTriplet { triplet: Triplet, reason: String },

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid function class: {0}")]
    InvalidFunctionClass(String),

    #[error("non-finite loss at iteration {iteration}{}", round_suffix(*.round))]
    NumericalFailure {
        iteration: usize,
        round: Option<usize>,
        iterate: Vec<f64>,
    },

    #[error("matrix is not symmetric positive definite")]
    MatrixConditioning,

    #[error("distribution support mismatch: {0}")]
    SupportMismatch(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("mismatched t grids across runs: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn round_suffix(round: Option<usize>) -> String {
    match round {
        Some(r) => format!(" (round {r})"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches the learner round index to a numerical failure.
    pub fn at_round(self, t: usize) -> Self {
        match self {
            Error::NumericalFailure {
                iteration, iterate, ..
            } => Error::NumericalFailure {
                iteration,
                round: Some(t),
                iterate,
            },
            other => other,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
