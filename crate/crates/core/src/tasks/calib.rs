//! Camera calibration: learn the intrinsics by backpropagating the
//! reprojection error through the PnP solve.

use log::warn;
use nalgebra::{DVector, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use super::provider::ParamProvider;
use super::{warm_solve, Convergence, OptimizerState, StopReason, Trace, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{flatten2, project_with_jets, Correspondences, Intrinsics, Pose};
use crate::implicit::{backward, solution_jacobians};

/// Upper bound of the sigmoid-bounded intrinsics provider.
pub const INTRINSICS_RANGE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibLoss {
    pub loss: f64,
    /// With respect to `(fx, fy, cx, cy)`.
    pub grad_k: Vector4<f64>,
    pub grad_y: Vector6<f64>,
}

/// `l = |x - pi(z | y, K)|^2` with partials in `K` and `y`.
pub fn calib_loss(x2d: &[Vector2<f64>], pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<CalibLoss> {
    if x2d.len() != pts3d.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} image vs {} world points",
            x2d.len(),
            pts3d.len()
        )));
    }
    let jet = project_with_jets(pts3d, pose, k)?;
    let r = flatten2(x2d) - &jet.pi;
    let gk = jet.d_intrinsics.tr_mul(&r) * -2.0;
    let gy = jet.d_pose.tr_mul(&r) * -2.0;
    Ok(CalibLoss {
        loss: r.norm_squared(),
        grad_k: Vector4::from_iterator(gk.iter().copied()),
        grad_y: Vector6::from_iterator(gy.iter().copied()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

fn intrinsics_from(h: &DVector<f64>) -> Result<Intrinsics> {
    Intrinsics::new(h[0], h[1], h[2], h[3])
}

/// True when every parameter lies strictly inside the provider's range.
pub fn within_range(k: &Intrinsics) -> bool {
    k.to_array().iter().all(|&v| v > 0.0 && v < INTRINSICS_RANGE)
}

/// Loss and `d loss / d K` at intrinsics `k`, re-solving from `previous`
/// (updated in place).
pub fn calib_objective(
    corrs: &Correspondences,
    k: &Intrinsics,
    previous: &mut Pose,
    cfg: &TrainConfig,
) -> Result<(f64, Vector4<f64>)> {
    let sol = warm_solve(corrs, k, previous, &cfg.solver, &cfg.ransac)?;
    *previous = sol.pose;
    let l = calib_loss(&corrs.image, &corrs.world, &sol.pose, k)?;
    let jac = solution_jacobians(corrs, k, &sol)?;
    Ok((l.loss, l.grad_k + backward(&jac, &l.grad_y).grad_k))
}

/// Trains `provider` (output `(fx, fy, cx, cy)`) from the identity pose.
pub fn run_calibration<P: ParamProvider>(
    provider: &mut P,
    corrs: &Correspondences,
    truth: Option<&Intrinsics>,
    cfg: &TrainConfig,
) -> Result<Trace<CalibEpoch>> {
    cfg.validate()?;
    if provider.output_dim() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "provider outputs {} values, intrinsics need 4",
            provider.output_dim()
        )));
    }
    if let Some(t) = truth.filter(|t| !within_range(t)) {
        warn!("ground-truth intrinsics {t:?} lie outside (0, {INTRINSICS_RANGE}) and cannot be reached");
    }
    let mut pose = Pose::identity();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.step_size, provider.theta().len());
    let mut stop_check = Convergence::new(cfg);
    let mut records = Vec::new();
    let stop = loop {
        let epoch = records.len();
        let step = intrinsics_from(&provider.forward())
            .and_then(|k| calib_objective(corrs, &k, &mut pose, cfg).map(|v| (k, v)));
        let (k, (loss, grad_k)) = match step {
            Ok(v) => v,
            Err(e) => {
                break StopReason::Failed {
                    epoch,
                    message: e.to_string(),
                }
            }
        };
        records.push(CalibEpoch {
            epoch,
            loss,
            intrinsics: k,
            pose,
        });
        if let Some(reason) = stop_check.observe(loss) {
            break reason;
        }
        let grad_theta = provider.vjp(&DVector::from_column_slice(grad_k.as_slice()));
        opt.step(provider.theta_mut(), &grad_theta);
    };
    Ok(Trace { records, stop })
}

/// `|estimate - truth| / |truth|` per parameter.
pub fn relative_errors(estimate: &Intrinsics, truth: &Intrinsics) -> [f64; 4] {
    let (e, t) = (estimate.to_array(), truth.to_array());
    std::array::from_fn(|i| (e[i] - t[i]).abs() / t[i].abs())
}
