use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes shared by every estimator in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few rows: need more than {needed}, have {have}")]
    TooFewRows { needed: usize, have: usize },

    #[error("empty group {0}")]
    EmptyGroup(u8),

    #[error("rank deficient design; near-collinear columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("logistic fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("tail features {i} and {j} are correlated (covariance {covariance:e})")]
    CorrelatedTail { i: usize, j: usize, covariance: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("turning point undefined: reduced and full projections have equal standard deviation")]
    EqualDeviations,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error("classifier failed: {0}")]
    Classifier(String),
}

impl Error {
    /// True for failures that come from the numerics rather than from the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NonConvergence { .. }
                | Error::Degenerate(_)
                | Error::EqualDeviations
                | Error::Singular(_)
                | Error::Inconsistent(_)
                | Error::Classifier(_)
        )
    }
}
