use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quadrature did not reach tolerance {target:.3e}: best value {value:.12e}, error estimate {estimate:.3e}")]
    QuadratureTolerance {
        value: f64,
        estimate: f64,
        target: f64,
    },

    #[error("linear solve stalled after {iterations} iterations: relative residual {achieved:.3e} (target {target:.3e})")]
    LinearSolve {
        iterations: usize,
        achieved: f64,
        target: f64,
    },

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("grid cannot resolve concentration rate {lambda:.3} at spacing {h:.4} (cap lambda*h <= {cap})")]
    Resolution { lambda: f64, h: f64, cap: f64 },

    #[error("configuration points {i} and {j} are too close (distance {dist:.3e}, floor {floor:.3e})")]
    Collision {
        i: usize,
        j: usize,
        dist: f64,
        floor: f64,
    },

    #[error("outside the admissible parameter set: {0}")]
    Admissibility(String),

    #[error("degenerate critical point: smallest |eigenvalue| {margin:.3e} below threshold {threshold:.3e}")]
    Degenerate { margin: f64, threshold: f64 },

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
