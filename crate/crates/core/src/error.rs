use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("eigen solver failure: {0}")]
    Eigen(String),

    #[error("no convergence after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },

    #[error("fixed point diverged: {0}")]
    Divergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("identity check failed: {0}")]
    IdentityFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
