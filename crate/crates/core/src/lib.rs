//! Differentiable Perspective-n-Point.
//!
//! - [`geometry`]: axis-angle poses, pinhole projection and exact jets.
//! - [`pnp`]: the forward solve (Levenberg-Marquardt, RANSAC initialization).
//! - [`implicit`]: input gradients of the solver output by implicit
//!   differentiation of its stationarity condition, plus a central-difference
//!   oracle used to verify them.
//! - [`tasks`]: end-to-end learning loops (pose estimation, calibrated SfM,
//!   camera calibration) that backpropagate through the solver.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dd;
pub mod error;
pub mod geometry;
pub mod implicit;
pub mod jet;
pub mod pnp;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
pub use geometry::{Correspondences, Intrinsics, Pose};
pub use implicit::{backward, constraint_f, constraint_jacobians, implicit_jacobians, GradientBundle};
pub use pnp::{ransac_init, solve_pnp, PnPSolution, RansacConfig, SolverConfig};
