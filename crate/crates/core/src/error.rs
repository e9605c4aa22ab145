use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite {term} encountered ({value})")]
    NonFinite { term: &'static str, value: f64 },

    #[error("enumeration refused: {n} units exceeds the limit of {n_max} (2^{n} states)")]
    EnumerationRefused { n: usize, n_max: usize },

    #[error("quadrature error: {0}")]
    Quadrature(String),

    #[error("sampler/model mismatch: {0}")]
    KernelMismatch(String),

    #[error("chain {chain} diverged at step {step} (step size {step_size})")]
    Divergence {
        chain: usize,
        step: usize,
        step_size: f64,
    },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("invalid input distribution: {0}")]
    InvalidDistribution(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training failed at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
