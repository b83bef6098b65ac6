use thiserror::Error;

/// Errors raised by the estimation and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("system matrix not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: non-finite estimate")]
    Diverged { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from numerics (as opposed to configuration or I/O).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::Quadrature(_) | Error::Diverged { .. } => {
                true
            }
            Error::Iteration { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
