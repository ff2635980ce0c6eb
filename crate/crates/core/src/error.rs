use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class prior is not uniform (max deviation {deviation:e} from 1/{n_classes})")]
    NonUniformPrior { n_classes: usize, deviation: f64 },

    #[error(
        "delta-separation failed after {retries} retries: achieved minimum distance {achieved:e}, required {required:e}"
    )]
    SeparationFailed {
        achieved: f64,
        required: f64,
        retries: usize,
    },

    #[error("exact inclusion-exclusion supports at most {max} classes, got {got}; use the Monte Carlo estimator")]
    TooManyClasses { got: usize, max: usize },

    #[error("vacuous bound: {0}")]
    VacuousBound(String),

    #[error("optimizer diverged: {0}")]
    Diverged(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed binary file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
