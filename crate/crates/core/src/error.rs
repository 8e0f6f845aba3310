use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    #[error("context {0} has no samples in the prompt")]
    MissingContext(usize),

    #[error("{outcomes} outcomes exceeds the limit of {limit}; use a smaller vocabulary or sequence length")]
    SizeLimit { outcomes: u128, limit: usize },

    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        LabError::InvalidParameter(msg.into())
    }

    /// True for errors caused by the filesystem or report serialization
    /// rather than by bad inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, LabError::Io(_) | LabError::Csv(_))
    }
}
