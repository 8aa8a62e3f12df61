use thiserror::Error;

pub type Result<T> = std::result::Result<T, PlsiError>;

/// Every failure the library can report.
///
/// Variants are grouped so the command-line front end can map them onto
/// stable exit codes (argument, data, divergence, inference).
#[derive(Debug, Error)]
pub enum PlsiError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("index direction is degenerate (zero vector)")]
    DegenerateDirection,

    #[error("operation not supported for the {family} family: {what}")]
    UnsupportedForFamily { family: String, what: String },

    #[error("non-finite value in layer {layer} of the link network")]
    NumericOverflow { layer: usize },

    #[error("survival outcome has no observed events")]
    NoEvents,

    #[error(
        "training diverged at epoch {epoch} (loss = {loss}); try a smaller learning rate than {learning_rate}"
    )]
    Divergence {
        epoch: usize,
        loss: f64,
        learning_rate: f64,
    },

    #[error("bootstrap failed: {dropped} of {requested} replicates dropped after retries")]
    InferenceFailure { dropped: usize, requested: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Argument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
