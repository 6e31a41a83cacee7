use thiserror::Error;

/// Errors produced by the scalemix library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Triangular factorization of a scale or covariance matrix failed.
    #[error("matrix is not positive definite: {0}")]
    SingularMatrix(String),

    #[error("estimation failed after {iterations} iterations: {reason}")]
    EstimationFailed { iterations: usize, reason: String },

    #[error("invalid band {name}: {reason}")]
    InvalidBand { name: String, reason: String },

    /// The recording is shorter than a single analysis window.
    #[error("recording too short: {samples} samples, window needs {window}")]
    EmptyResult { samples: usize, window: usize },

    #[error("labeling failed: {0}")]
    LabelingFailed(String),

    #[error("model selection failed: {0}")]
    SelectionFailed(String),

    #[error("effect size undefined: {0}")]
    UndefinedEffectSize(String),
}

pub type Result<T> = std::result::Result<T, Error>;
