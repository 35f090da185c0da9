use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("input not sorted at index {index}: {message}")]
    Unsorted { index: usize, message: String },

    #[error("malformed data at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    /// The optimizer ran out of iterations; `best` holds the parameters and
    /// chi-square of the best point it visited.
    #[error("fit did not converge after {iterations} iterations (best chi2 {chi2:.4e})")]
    FitFailed {
        iterations: usize,
        chi2: f64,
        best: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
