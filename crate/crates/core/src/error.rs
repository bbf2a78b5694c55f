use thiserror::Error;

/// Errors raised by the model, estimation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite state at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("covariance lost positivity at step {step} (variance {variance:e})")]
    CovarianceNotPositive { step: usize, variance: f64 },

    #[error("polynomial drift fit of order {order} is rank deficient")]
    RankDeficient { order: usize },

    #[error("likelihood decreased by {drop:e} at EM iteration {iteration}")]
    NonMonotoneLikelihood { iteration: usize, drop: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad input or configuration rather than by
    /// the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_) | Error::InvalidInput(_) | Error::Io(_) | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
