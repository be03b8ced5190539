use std::path::Path;

use bpnp::geometry::log_rotation;
use bpnp::rng::{stream_rng, Stream};
use bpnp::tasks::pose::{run_pose_estimation, PoseEpoch, PoseProblem};
use bpnp::tasks::synthetic::SceneSpec;
use bpnp::tasks::{DirectProvider, MlpProvider, StopReason, Trace};
use bpnp::Pose;
use serde::{Deserialize, Serialize};

use super::{finish, load_scene, Outcome};
use crate::config::PoseConfig;
use crate::error::CliResult;
use crate::io::OutputDir;
use crate::manifest::RunManifest;

/// One line of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub epoch: usize,
    pub loss: f64,
    pub pose_term: f64,
    pub keypoint_term: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    /// RMS (px) between the solved pose's projection and the target's.
    pub reprojection_rms: f64,
    /// RMS (px) between the keypoints and the target projection.
    pub keypoint_rms: f64,
}

impl From<&PoseEpoch> for PoseRow {
    fn from(e: &PoseEpoch) -> Self {
        let (r, t) = (e.pose.rot, e.pose.trans);
        Self {
            epoch: e.epoch,
            loss: e.loss,
            pose_term: e.pose_term,
            keypoint_term: e.keypoint_term,
            rx: r.x,
            ry: r.y,
            rz: r.z,
            tx: t.x,
            ty: t.y,
            tz: t.z,
            reprojection_rms: e.reprojection_rms,
            keypoint_rms: e.keypoint_rms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFinal {
    pub loss: f64,
    pub pose_term: f64,
    pub keypoint_term: f64,
    pub pose: Pose,
    pub rotation_error_deg: f64,
    /// Translation error relative to the target's distance from the camera.
    pub translation_error_rel: f64,
    pub reprojection_rms: f64,
    pub keypoint_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSummary {
    pub converged: bool,
    pub stop: StopReason,
    pub epochs: usize,
    pub target: Pose,
    pub final_loss: Option<f64>,
    /// The pose was recovered while the keypoints settled away from the
    /// target projection.
    pub keypoint_drift: bool,
    #[serde(rename = "final")]
    pub last: Option<PoseFinal>,
}

/// Angle (degrees) of the rotation taking `a` to `b`.
pub fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    let rel = a.rotation_matrix().transpose() * b.rotation_matrix();
    log_rotation(&rel).map_or(f64::NAN, |w| w.norm().to_degrees())
}

pub fn summarize(trace: &Trace<PoseEpoch>, target: &Pose, cfg: &PoseConfig) -> PoseSummary {
    let last = trace.records.last().map(|e| PoseFinal {
        loss: e.loss,
        pose_term: e.pose_term,
        keypoint_term: e.keypoint_term,
        pose: e.pose,
        rotation_error_deg: rotation_error_deg(&e.pose, target),
        translation_error_rel: (e.pose.trans - target.trans).norm() / target.trans.norm(),
        reprojection_rms: e.reprojection_rms,
        keypoint_rms: e.keypoint_rms,
    });
    let keypoint_drift = last
        .as_ref()
        .is_some_and(|l| l.reprojection_rms <= cfg.pose_tolerance && l.keypoint_rms > cfg.drift_threshold);
    PoseSummary {
        converged: trace.converged(),
        stop: trace.stop.clone(),
        epochs: trace.records.len(),
        target: *target,
        final_loss: last.as_ref().map(|l| l.loss),
        keypoint_drift,
        last,
    }
}

/// Learns keypoints whose PnP solution matches a target pose.
pub fn run(cfg: &PoseConfig, out: &Path) -> CliResult<Outcome> {
    let manifest = RunManifest::start("pose", cfg, cfg.seed);
    let mut dir = OutputDir::create(out)?;
    let spec = SceneSpec {
        n: cfg.n,
        frames: 1,
        intrinsics: cfg.intrinsics,
        distance_range: cfg.distance_range,
        seed: cfg.seed,
        ..SceneSpec::default()
    };
    let scene = load_scene(cfg.scene.as_deref(), &spec)?;
    let problem = PoseProblem {
        points: scene.points,
        intrinsics: scene.intrinsics,
        target: scene.poses[0],
    };
    let x0 = problem.noisy_keypoints(cfg.init_noise, cfg.seed)?;
    let trace = match cfg.provider.mlp_spec(x0.as_slice()) {
        None => run_pose_estimation(&mut DirectProvider::new(x0), &problem, &cfg.train)?,
        Some(spec) => {
            let mut provider = MlpProvider::random(spec, &mut stream_rng(cfg.seed, Stream::Init))?;
            run_pose_estimation(&mut provider, &problem, &cfg.train)?
        }
    };

    let rows: Vec<PoseRow> = trace.records.iter().map(PoseRow::from).collect();
    dir.csv("trace.csv", &rows)?;
    let summary = summarize(&trace, &problem.target, cfg);
    finish(&mut dir, manifest, &summary)?;
    let done = format!(
        "pose: {} epochs, loss {:.3e}, keypoint RMS {:.3} px{}",
        summary.epochs,
        summary.final_loss.unwrap_or(f64::NAN),
        summary.last.as_ref().map_or(f64::NAN, |l| l.keypoint_rms),
        if summary.keypoint_drift {
            " (keypoint drift)"
        } else {
            ""
        }
    );
    Ok(Outcome::from_stop(&trace.stop, done))
}
