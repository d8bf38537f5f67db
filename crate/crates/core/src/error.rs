use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("forward cache does not belong to these parameters")]
    StaleCache,

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Solver {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("surrogate problem is infeasible (min-max constraint value {y_star:.3e})")]
    Infeasible { y_star: f64 },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
