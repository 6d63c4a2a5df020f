use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("threshold {e_th} exceeds the zero-blocking bound {max}")]
    InvalidThreshold { e_th: usize, max: usize },

    #[error("rate-matrix iteration stopped after {iterations} iterations with residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("data queue is unstable at this operating point")]
    Unstable,

    #[error("boundary balance system is singular")]
    SingularBoundary,

    #[error("chain has no unique stationary distribution")]
    SingularChain,

    #[error("transmission chain has no absorbing success state")]
    NonAbsorbing,
}
