use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("coefficient matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("grid misalignment: {0}")]
    Misaligned(String),

    #[error("inconsistent Neumann data: defect {defect:.3e} exceeds {tolerance:.3e}")]
    Inconsistent { defect: f64, tolerance: f64 },

    #[error("factorization failed: {0}")]
    Singular(String),

    #[error("degenerate snapshot set: requested {requested}, achieved rank {rank}")]
    Degenerate { requested: usize, rank: usize },

    #[error("input is not A-harmonic: relative interior residual {0:.3e}")]
    NotHarmonic(f64),

    #[error("patch {patch}: {source}")]
    Patch {
        patch: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn at_patch(self, patch: usize) -> Self {
        Error::Patch {
            patch,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
