use thiserror::Error;

/// Errors produced by model construction, estimation, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// Fitted communality reached or exceeded 1 (negative residual variance).
    #[error("Heywood case: item {item} has communality {communality:.6} >= 1")]
    Heywood { item: usize, communality: f64 },

    /// A loading too close to zero for the difficulty b = tau/lambda to be defined.
    #[error("degenerate loading on item {item}: |lambda| below tolerance")]
    DegenerateLoading { item: usize },

    /// Data unusable for the requested operation (empty, constant column, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// An iterative procedure exhausted its iteration budget.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// A Markov chain reached a non-finite state.
    #[error("chain divergence: non-finite state at iteration {0}")]
    ChainDivergence(usize),

    /// PSRF undefined because the pooled within-chain variance is zero.
    #[error("zero within-chain variance; PSRF undefined")]
    ZeroVariance,

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
