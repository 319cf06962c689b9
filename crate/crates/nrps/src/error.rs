//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("network is disconnected (Laplacian rank below n-1)")]
    DisconnectedNetwork,

    #[error("singular matrix in linear solve")]
    SingularMatrix,

    #[error("degenerate history: zero price dispersion, least squares is underdetermined")]
    DegenerateHistory,

    #[error("QP solver failed to converge after {iterations} iterations (last KKT residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("realized demand is negative ({value:.6}) on link ({i},{j}); scenario violates the non-negativity condition")]
    NegativeDemand { i: usize, j: usize, value: f64 },

    #[error("trajectories were generated from different shock streams (seed {a} vs {b}); regret requires common random numbers")]
    StreamMismatch { a: u64, b: u64 },

    #[error("day {day}: {source}")]
    AtDay {
        day: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach the simulation day on which the error occurred.
    pub fn at_day(self, day: u32) -> Error {
        Error::AtDay {
            day,
            source: Box::new(self),
        }
    }
}
