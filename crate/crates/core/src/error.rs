//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A grid or problem would not fit in addressable memory, or exceeds a guard.
    #[error("size error: {0}")]
    Size(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value appeared while evaluating the objective.
    #[error("numeric failure at iteration {iteration}: {message}")]
    Numeric { iteration: usize, message: String },

    /// The SGD loop produced a non-finite loss. `trace` holds the losses seen so far.
    #[error("solver diverged at iteration {iteration} (last finite loss {last_finite:?})")]
    Divergence {
        iteration: usize,
        last_finite: Option<f64>,
        trace: Vec<f64>,
    },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("{0}")]
    Unsupported(String),

    #[error("no alpha reaches coverage {target:.4}; best was {best_coverage:.4} at alpha {best_alpha:.4}")]
    Calibration {
        target: f64,
        best_alpha: f64,
        best_coverage: f64,
    },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
