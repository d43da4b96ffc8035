use thiserror::Error;

use crate::em::MixtureParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix [[{a}, {b}], [{b}, {c}]] is not symmetric positive definite")]
    NotPositiveDefinite { a: f64, b: f64, c: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("regularized system is numerically singular (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("component {component} collapsed at EM iteration {iteration} (mixing weight below 1e-12)")]
    Collapsed {
        component: usize,
        iteration: usize,
        /// Parameters of the last iterate before the collapse.
        last_valid: Box<MixtureParams>,
        loglik_trace: Vec<f64>,
    },

    #[error("all {restarts} EM restarts failed for K = {k}")]
    AllRestartsFailed { k: usize, restarts: usize },

    #[error("no candidate number of components could be fitted")]
    NoFeasibleK,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::Collapsed { .. }
                | Error::AllRestartsFailed { .. }
                | Error::NoFeasibleK
        )
    }
}
