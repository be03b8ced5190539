//! Structure from motion with calibrated cameras: learn the 3D structure by
//! backpropagating the total reprojection error through one PnP solve per
//! frame.

use log::warn;
use nalgebra::{DVector, Vector2, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::provider::ParamProvider;
use super::{warm_solve, Convergence, OptimizerState, StopReason, Trace, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{flatten2, project_with_jets, unflatten3, Correspondences, Intrinsics, Pose};
use crate::implicit::{backward, solution_jacobians};
use crate::pnp::RansacConfig;

/// The 2D observations of one frame and the global point each belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub indices: Vec<usize>,
    pub image: Vec<Vector2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmProblem {
    pub intrinsics: Intrinsics,
    pub num_points: usize,
    pub frames: Vec<FrameObservation>,
}

impl SfmProblem {
    /// Checks index maps; returns points seen by fewer than two frames.
    pub fn validate(&self) -> Result<Vec<usize>> {
        self.intrinsics.validate()?;
        if self.frames.is_empty() {
            return Err(Error::InvalidInput("problem has no frames".into()));
        }
        let mut seen = vec![0usize; self.num_points];
        for (j, f) in self.frames.iter().enumerate() {
            if f.indices.len() != f.image.len() {
                return Err(Error::ShapeMismatch(format!(
                    "frame {j}: {} indices vs {} observations",
                    f.indices.len(),
                    f.image.len()
                )));
            }
            let mut in_frame = vec![false; self.num_points];
            for &i in &f.indices {
                if i >= self.num_points || in_frame[i] {
                    return Err(Error::InvalidInput(format!(
                        "frame {j}: point index {i} is out of range or repeated"
                    )));
                }
                in_frame[i] = true;
                seen[i] += 1;
            }
        }
        Ok((0..self.num_points).filter(|&i| seen[i] < 2).collect())
    }

    /// `S(z | x^(j))`: the points frame `j` observes, in observation order.
    pub fn select(&self, frame: usize, pts3d: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.frames[frame].indices.iter().map(|&i| pts3d[i]).collect()
    }

    pub fn correspondences(&self, frame: usize, pts3d: &[Vector3<f64>]) -> Result<Correspondences> {
        Correspondences::new(self.frames[frame].image.clone(), self.select(frame, pts3d))
    }

    /// Adds a frame-local `3m` gradient into a global `3n` one.
    pub fn scatter(&self, frame: usize, local: &DVector<f64>, global: &mut DVector<f64>) {
        for (slot, &i) in self.frames[frame].indices.iter().enumerate() {
            for c in 0..3 {
                global[3 * i + c] += local[3 * slot + c];
            }
        }
    }
}

/// One frame's share of the loss and its partials.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLoss {
    pub loss: f64,
    /// With respect to the frame's selected points (`3m`).
    pub grad_z: DVector<f64>,
    pub grad_y: Vector6<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmLoss {
    pub loss: f64,
    pub frames: Vec<FrameLoss>,
}

fn frame_loss(image: &[Vector2<f64>], pts: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<FrameLoss> {
    let jet = project_with_jets(pts, pose, k)?;
    let r = flatten2(image) - &jet.pi;
    let mut grad_z = DVector::zeros(3 * pts.len());
    for (i, block) in jet.d_points.iter().enumerate() {
        let ri = Vector2::new(r[2 * i], r[2 * i + 1]);
        grad_z.fixed_rows_mut::<3>(3 * i).copy_from(&(block.tr_mul(&ri) * -2.0));
    }
    let gy = jet.d_pose.tr_mul(&r) * -2.0;
    Ok(FrameLoss {
        loss: r.norm_squared(),
        grad_z,
        grad_y: Vector6::from_iterator(gy.iter().copied()),
    })
}

/// `l = sum_j |x^(j) - pi(z^(j) | y^(j), K)|^2` with per-frame partials.
pub fn sfm_loss(problem: &SfmProblem, pts3d: &[Vector3<f64>], poses: &[Pose]) -> Result<SfmLoss> {
    if pts3d.len() != problem.num_points || poses.len() != problem.frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points and {} poses for a problem with {} points and {} frames",
            pts3d.len(),
            poses.len(),
            problem.num_points,
            problem.frames.len()
        )));
    }
    let frames = problem
        .frames
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(j, (obs, pose))| {
            frame_loss(&obs.image, &problem.select(j, pts3d), pose, &problem.intrinsics).map_err(|e| e.in_frame(j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SfmLoss {
        loss: frames.iter().map(|f| f.loss).sum(),
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub poses: Vec<Pose>,
    /// Present on snapshot epochs.
    pub structure: Option<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmRun {
    pub trace: Trace<SfmEpoch>,
    /// Structure at the last evaluated epoch.
    pub structure: Vec<Vector3<f64>>,
    pub poses: Vec<Pose>,
    /// Points seen by fewer than two frames; their depth is unconstrained.
    pub under_observed: Vec<usize>,
}

struct FrameStep {
    pose: Pose,
    loss: f64,
    grad_z: DVector<f64>,
}

fn frame_step(
    problem: &SfmProblem,
    frame: usize,
    pts3d: &[Vector3<f64>],
    previous: &Pose,
    cfg: &TrainConfig,
) -> Result<FrameStep> {
    let corrs = problem.correspondences(frame, pts3d)?;
    let k = &problem.intrinsics;
    let ransac = RansacConfig {
        seed: cfg.ransac.seed.wrapping_add(frame as u64),
        ..cfg.ransac
    };
    let sol = warm_solve(&corrs, k, previous, &cfg.solver, &ransac)?;
    let fl = frame_loss(&corrs.image, &corrs.world, &sol.pose, k)?;
    let jac = solution_jacobians(&corrs, k, &sol)?;
    // Direct path plus the path through the re-solved pose.
    let through_pose = backward(&jac, &fl.grad_y).grad_z;
    Ok(FrameStep {
        pose: sol.pose,
        loss: fl.loss,
        grad_z: fl.grad_z + through_pose,
    })
}

/// Loss and `d loss / d z` at structure `pts3d`, re-solving every frame
/// from `poses` (updated in place).
pub fn sfm_objective(
    problem: &SfmProblem,
    pts3d: &[Vector3<f64>],
    poses: &mut [Pose],
    cfg: &TrainConfig,
) -> Result<(f64, DVector<f64>)> {
    let steps: Vec<Result<FrameStep>> = (0..problem.frames.len())
        .into_par_iter()
        .map(|j| frame_step(problem, j, pts3d, &poses[j], cfg).map_err(|e| e.in_frame(j)))
        .collect();
    let mut loss = 0.0;
    let mut grad = DVector::zeros(3 * problem.num_points);
    for (j, step) in steps.into_iter().enumerate() {
        let step = step?;
        loss += step.loss;
        problem.scatter(j, &step.grad_z, &mut grad);
        poses[j] = step.pose;
    }
    Ok((loss, grad))
}

/// Trains `provider` (output `3n`) so its structure explains every frame.
/// Frames start from the identity pose and are warm-started from their
/// previous solution afterwards. A structure snapshot is kept every
/// `snapshot_stride` epochs (0 disables snapshots).
pub fn run_sfm<P: ParamProvider>(
    provider: &mut P,
    problem: &SfmProblem,
    cfg: &TrainConfig,
    snapshot_stride: usize,
) -> Result<SfmRun> {
    cfg.validate()?;
    let under_observed = problem.validate()?;
    if !under_observed.is_empty() {
        warn!(
            "{} point(s) are seen by fewer than two frames and have unconstrained depth",
            under_observed.len()
        );
    }
    if provider.output_dim() != 3 * problem.num_points {
        return Err(Error::ShapeMismatch(format!(
            "provider outputs {} values, structure needs {}",
            provider.output_dim(),
            3 * problem.num_points
        )));
    }
    if let Some((j, f)) = problem.frames.iter().enumerate().find(|(_, f)| f.indices.len() < 6) {
        return Err(Error::TooFewPoints {
            required: 6,
            actual: f.indices.len(),
        }
        .in_frame(j));
    }

    let mut poses = vec![Pose::identity(); problem.frames.len()];
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.step_size, provider.theta().len());
    let mut stop_check = Convergence::new(cfg);
    let mut records = Vec::new();
    let mut structure;
    let stop = loop {
        let epoch = records.len();
        structure = unflatten3(provider.forward().as_slice());
        let (loss, grad_z) = match sfm_objective(problem, &structure, &mut poses, cfg) {
            Ok(v) => v,
            Err(e) => {
                break StopReason::Failed {
                    epoch,
                    message: e.to_string(),
                }
            }
        };
        let snapshot = snapshot_stride > 0 && epoch % snapshot_stride == 0;
        records.push(SfmEpoch {
            epoch,
            loss,
            poses: poses.clone(),
            structure: snapshot.then(|| structure.clone()),
        });
        if let Some(reason) = stop_check.observe(loss) {
            break reason;
        }
        let grad_theta = provider.vjp(&grad_z);
        opt.step(provider.theta_mut(), &grad_theta);
    };
    Ok(SfmRun {
        trace: Trace { records, stop },
        structure,
        poses,
        under_observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::synthetic::{generate_synthetic, SceneSpec};

    fn scene() -> crate::tasks::synthetic::Scene {
        let spec = SceneSpec {
            n: 20,
            frames: 3,
            visibility: 0.7,
            seed: 5,
            ..SceneSpec::default()
        };
        generate_synthetic(&spec).unwrap()
    }

    #[test]
    fn loss_is_zero_at_ground_truth() {
        let s = scene();
        let l = sfm_loss(&s.problem(), &s.points, &s.poses).unwrap();
        assert!(l.loss < 1e-18, "{}", l.loss);
    }

    #[test]
    fn single_pixel_shift_gives_unit_loss() {
        let mut s = scene();
        s.frames[1].image[3].x += 1.0;
        let l = sfm_loss(&s.problem(), &s.points, &s.poses).unwrap();
        assert!((l.loss - 1.0).abs() < 1e-9);
        assert!(l.frames[0].loss < 1e-18 && l.frames[2].loss < 1e-18);
    }

    #[test]
    fn loss_matches_double_loop() {
        let s = scene();
        let mut pts = s.points.clone();
        pts.iter_mut()
            .enumerate()
            .for_each(|(i, p)| p.x += 0.01 * (i as f64).sin());
        let l = sfm_loss(&s.problem(), &pts, &s.poses).unwrap();
        let k = s.intrinsics;
        let mut brute = 0.0;
        for (f, pose) in s.frames.iter().zip(&s.poses) {
            for (slot, &i) in f.indices.iter().enumerate() {
                let p = pose.rotation_matrix() * pts[i] + pose.trans;
                let du = f.image[slot].x - (k.fx * p.x / p.z + k.cx);
                let dv = f.image[slot].y - (k.fy * p.y / p.z + k.cy);
                brute += du * du + dv * dv;
            }
        }
        assert!((l.loss - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn projection_failures_name_the_frame() {
        let s = scene();
        let mut poses = s.poses.clone();
        poses[2].trans.z = -100.0;
        match sfm_loss(&s.problem(), &s.points, &poses) {
            Err(Error::Frame { frame: 2, source }) => {
                assert!(matches!(*source, Error::PointBehindCamera { .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_reports_problems() {
        let s = scene();
        let mut p = s.problem();
        assert!(p.validate().unwrap().is_empty());
        p.frames[0].indices[1] = p.frames[0].indices[0];
        assert!(p.validate().is_err());
        let mut p = s.problem();
        p.frames.truncate(1);
        assert!(!p.validate().unwrap().is_empty());
    }
}
