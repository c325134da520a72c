use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range in mode {mode}: {index} not in 1..={size}")]
    IndexOutOfRange { mode: usize, index: usize, size: usize },

    #[error("invalid mode {mode} for a tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("invalid rank: {0}")]
    InvalidRank(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("SVD failed: {0}")]
    Svd(String),

    #[error("design matrix is rank deficient ({rank} of {cols} columns); add a ridge penalty")]
    RankDeficient { rank: usize, cols: usize },

    #[error("solver diverged after {iterations} iterations: {reason}")]
    Diverged { iterations: usize, reason: String },

    #[error("lasso did not converge in {iterations} iterations (KKT violation {violation:.3e})")]
    LassoNotConverged { iterations: usize, violation: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("construction check failed: {0}")]
    Construction(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
