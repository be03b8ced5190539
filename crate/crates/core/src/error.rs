use thiserror::Error;

use crate::pnp::PnPSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} is not in front of the camera (depth {depth:e})")]
    PointBehindCamera { index: usize, depth: f64 },

    #[error("matrix is not a rotation: orthogonality error {orthogonality:e}, det {det}")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("at least {required} correspondences are required, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(
        "solver did not converge after {} iterations (stationarity {:e})",
        .0.iterations,
        .0.stationarity_norm
    )]
    DidNotConverge(Box<PnPSolution>),

    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),

    #[error("no RANSAC hypothesis found")]
    NoHypothesisFound,

    #[error("stationary Hessian is singular (condition number {condition:e})")]
    SingularStationaryHessian { condition: f64 },

    #[error("backward pass requires a converged forward solution")]
    NotConverged,

    #[error("scene generation failed: {0}")]
    GenerationFailed(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_frame(self, frame: usize) -> Self {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }
}
