use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `sigma` exceeds `sigma0(p)`: no process mean reaches fraction defective `p`.
    #[error("acceptance interval is empty: sigma {sigma} exceeds sigma0 {sigma0}")]
    EmptyAcceptanceInterval { sigma: f64, sigma0: f64 },

    #[error("quadrature did not reach tolerance {tolerance:e} (error estimate {estimate:e})")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("infeasible design requirement: {0}")]
    Infeasible(String),

    #[error("search did not converge: {0}")]
    NoConvergence(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }
}
