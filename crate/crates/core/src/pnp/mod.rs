//! Forward pass: least-squares PnP by Levenberg-Marquardt, seeded by a
//! provided pose or by RANSAC over linear hypotheses.

mod dlt;
mod lm;
mod minimal;
mod p3p;
mod ransac;

pub use lm::{solve_pnp, PnPSolution, SolverConfig};
pub use minimal::{minimal_solve, DLT_MIN_POINTS, MIN_SAMPLE_POINTS};
pub use ransac::{inliers, ransac_init, RansacConfig};

use crate::error::Result;
use crate::geometry::{all_in_front, Correspondences, Intrinsics, Pose};

/// Solves from `init` when it places every point in front of the camera,
/// otherwise from a RANSAC initial pose.
pub fn solve_pnp_warm(
    corrs: &Correspondences,
    k: &Intrinsics,
    init: Option<&Pose>,
    cfg: &SolverConfig,
    ransac: &RansacConfig,
) -> Result<PnPSolution> {
    let start = match init {
        Some(p) if all_in_front(&corrs.world, p) => *p,
        _ => ransac_init(corrs, k, ransac)?,
    };
    solve_pnp(corrs, k, &start, cfg)
}
