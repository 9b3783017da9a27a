use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("frequency {k:?} out of range for resolution {resolution} (|k_i| must be <= {max})", max = resolution / 2)]
    FrequencyOutOfRange { k: Vec<i64>, resolution: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("ellipticity failure: minimal eigenvalue {min_eigenvalue:e} at grid node {node:?}")]
    Ellipticity { node: Vec<usize>, min_eigenvalue: f64 },

    #[error("solver did not converge after {iterations} iterations; residual history {history:?}")]
    NoConvergence { iterations: usize, history: Vec<f64> },

    #[error("negative density {value:e} at grid node {node:?}")]
    NegativeDensity { node: Vec<usize>, value: f64 },

    #[error("right-hand side is not centred: its integral against the invariant density is {0:e}")]
    NotCentered(f64),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("path carries no Brownian increments")]
    MissingNoise,

    #[error("transport problem with {cells} cells exceeds the exact-solver cap of {cap}; use w1_dual_bound or the entropic solver")]
    SizeCap { cells: usize, cap: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
