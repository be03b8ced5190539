//! Pose estimation: learn 2D keypoints whose PnP pose reproduces a target
//! pose, optionally keeping the keypoints on their own reprojections.

use nalgebra::{DVector, Vector2, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::provider::ParamProvider;
use super::{warm_solve, Convergence, OptimizerState, StopReason, Trace, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{flatten2, project, project_with_pose_jacobian, unflatten2, Correspondences, Intrinsics, Pose};
use crate::implicit::{backward, solution_jacobians};
use crate::rng::{stream_rng, Stream};

/// Fixed data of a pose-estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseProblem {
    pub points: Vec<Vector3<f64>>,
    pub intrinsics: Intrinsics,
    pub target: Pose,
}

impl PoseProblem {
    /// `pi(z | y*, K)`, flattened.
    pub fn target_keypoints(&self) -> Result<DVector<f64>> {
        project(&self.points, &self.target, &self.intrinsics)
    }

    /// Target keypoints plus uniform noise in `[-amplitude, amplitude]` px.
    pub fn noisy_keypoints(&self, amplitude: f64, seed: u64) -> Result<DVector<f64>> {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut x = self.target_keypoints()?;
        if amplitude > 0.0 {
            x.iter_mut()
                .for_each(|v| *v += rng.random_range(-amplitude..=amplitude));
        }
        Ok(x)
    }
}

/// Loss value, its two terms, and its partials.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLoss {
    pub loss: f64,
    /// `|pi(y) - pi(y*)|^2`.
    pub pose_term: f64,
    /// `|x - pi(y)|^2` (unweighted).
    pub keypoint_term: f64,
    pub grad_x: DVector<f64>,
    pub grad_y: Vector6<f64>,
}

/// `l = |pi(z|y) - pi(z|y*)|^2 + lambda |x - pi(z|y)|^2`.
pub fn pose_loss(
    x2d: &[Vector2<f64>],
    pose: &Pose,
    pts3d: &[Vector3<f64>],
    k: &Intrinsics,
    target: &Pose,
    lambda: f64,
) -> Result<PoseLoss> {
    if x2d.len() != pts3d.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} keypoints vs {} points",
            x2d.len(),
            pts3d.len()
        )));
    }
    let (pi, jac) = project_with_pose_jacobian(pts3d, pose, k)?;
    let pi_target = project(pts3d, target, k)?;
    let to_target = &pi - pi_target;
    let r = flatten2(x2d) - &pi;
    let gy = jac.tr_mul(&(&to_target * 2.0 - &r * (2.0 * lambda)));
    Ok(PoseLoss {
        loss: to_target.norm_squared() + lambda * r.norm_squared(),
        pose_term: to_target.norm_squared(),
        keypoint_term: r.norm_squared(),
        grad_x: &r * (2.0 * lambda),
        grad_y: Vector6::from_iterator(gy.iter().copied()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub pose_term: f64,
    pub keypoint_term: f64,
    pub pose: Pose,
    /// Flat keypoints `x = h(theta)` (2n).
    pub keypoints: Vec<f64>,
    /// RMS distance (px) between `pi(z|y)` and `pi(z|y*)`.
    pub reprojection_rms: f64,
    /// RMS distance (px) between `x` and `pi(z|y*)`.
    pub keypoint_rms: f64,
}

fn rms_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = (a.len() / 2).max(1) as f64;
    ((a - b).norm_squared() / n).sqrt()
}

/// Loss and `d loss / d x` at keypoints `x`, re-solving from `previous`
/// (updated in place).
pub fn pose_objective(
    problem: &PoseProblem,
    x: &DVector<f64>,
    previous: &mut Pose,
    cfg: &TrainConfig,
) -> Result<(PoseLoss, DVector<f64>)> {
    let image = unflatten2(x.as_slice());
    let corrs = Correspondences::new(image, problem.points.clone())?;
    let k = &problem.intrinsics;
    let sol = warm_solve(&corrs, k, previous, &cfg.solver, &cfg.ransac)?;
    *previous = sol.pose;
    let l = pose_loss(
        &corrs.image,
        &sol.pose,
        &corrs.world,
        k,
        &problem.target,
        cfg.lambda_reg,
    )?;
    let jac = solution_jacobians(&corrs, k, &sol)?;
    let grad = &l.grad_x + backward(&jac, &l.grad_y).grad_x;
    Ok((l, grad))
}

/// Trains `provider` (output `2n`) starting from the identity pose.
pub fn run_pose_estimation<P: ParamProvider>(
    provider: &mut P,
    problem: &PoseProblem,
    cfg: &TrainConfig,
) -> Result<Trace<PoseEpoch>> {
    cfg.validate()?;
    let n = problem.points.len();
    if provider.output_dim() != 2 * n {
        return Err(Error::ShapeMismatch(format!(
            "provider outputs {} values, {n} keypoints need {}",
            provider.output_dim(),
            2 * n
        )));
    }
    let target_pi = problem.target_keypoints()?;
    let mut pose = Pose::identity();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.step_size, provider.theta().len());
    let mut stop_check = Convergence::new(cfg);
    let mut records = Vec::new();
    let stop = loop {
        let epoch = records.len();
        let x = provider.forward();
        let (l, grad_x) = match pose_objective(problem, &x, &mut pose, cfg) {
            Ok(v) => v,
            Err(e) => {
                break StopReason::Failed {
                    epoch,
                    message: e.to_string(),
                }
            }
        };
        let pi = project(&problem.points, &pose, &problem.intrinsics)?;
        records.push(PoseEpoch {
            epoch,
            loss: l.loss,
            pose_term: l.pose_term,
            keypoint_term: l.keypoint_term,
            pose,
            keypoints: x.as_slice().to_vec(),
            reprojection_rms: rms_distance(&pi, &target_pi),
            keypoint_rms: rms_distance(&x, &target_pi),
        });
        if let Some(reason) = stop_check.observe(l.loss) {
            break reason;
        }
        let grad_theta = provider.vjp(&grad_x);
        opt.step(provider.theta_mut(), &grad_theta);
    };
    Ok(Trace { records, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::synthetic::{generate_synthetic, SceneSpec};

    fn problem() -> PoseProblem {
        let scene = generate_synthetic(&SceneSpec {
            seed: 3,
            ..SceneSpec::default()
        })
        .unwrap();
        PoseProblem {
            points: scene.points,
            intrinsics: scene.intrinsics,
            target: scene.poses[0],
        }
    }

    #[test]
    fn zero_at_the_target() {
        let p = problem();
        let x = unflatten2(p.target_keypoints().unwrap().as_slice());
        let l = pose_loss(&x, &p.target, &p.points, &p.intrinsics, &p.target, 1.0).unwrap();
        assert_eq!(l.loss, 0.0);
        assert_eq!(l.grad_x.amax(), 0.0);
        assert_eq!(l.grad_y.amax(), 0.0);
    }

    #[test]
    fn regularizer_off_ignores_keypoints() {
        let p = problem();
        let x: Vec<_> = (0..p.points.len())
            .map(|i| Vector2::new(i as f64 * 37.0, -5.0))
            .collect();
        let l = pose_loss(&x, &p.target, &p.points, &p.intrinsics, &p.target, 0.0).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.keypoint_term > 0.0);
    }

    #[test]
    fn partials_match_central_differences() {
        let p = problem();
        let x0 = p.noisy_keypoints(10.0, 1).unwrap();
        let y0 = Pose::new(
            p.target.rot + Vector3::new(0.01, -0.02, 0.01),
            p.target.trans + Vector3::new(0.02, 0.0, -0.05),
        );
        let lambda = 0.7;
        let eval = |x: &DVector<f64>, y: &Pose| {
            pose_loss(
                &unflatten2(x.as_slice()),
                y,
                &p.points,
                &p.intrinsics,
                &p.target,
                lambda,
            )
            .unwrap()
        };
        let l = eval(&x0, &y0);
        let h = 1e-5;
        for i in 0..x0.len() {
            let (mut a, mut b) = (x0.clone(), x0.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (eval(&a, &y0).loss - eval(&b, &y0).loss) / (2.0 * h);
            assert!((fd - l.grad_x[i]).abs() <= 1e-5 * l.grad_x.amax(), "x[{i}]");
        }
        let yv = y0.to_vector();
        for j in 0..6 {
            let (mut a, mut b) = (yv, yv);
            a[j] += h;
            b[j] -= h;
            let fd = (eval(&x0, &Pose::from_vector(&a)).loss - eval(&x0, &Pose::from_vector(&b)).loss) / (2.0 * h);
            assert!(
                (fd - l.grad_y[j]).abs() <= 1e-5 * l.grad_y.amax(),
                "y[{j}]: {fd} vs {}",
                l.grad_y[j]
            );
        }
    }
}
