use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, SolverConfig};
use super::minimal::{minimal_solve, DLT_MIN_POINTS, MIN_SAMPLE_POINTS};
use crate::error::{Error, Result};
use crate::geometry::{objective, Correspondences, Intrinsics, Pose};
use crate::rng::{stream_rng, Stream};

/// LM steps spent polishing each minimal-sample hypothesis before scoring.
const REFINE_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Reprojection distance (pixels) below which a point is an inlier.
    pub inlier_threshold: f64,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold: 2.0,
            sample_size: DLT_MIN_POINTS,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.sample_size < MIN_SAMPLE_POINTS || !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidInput(format!("invalid RANSAC config {self:?}")));
        }
        Ok(())
    }
}

/// Indices of points reprojecting within `threshold` pixels under `pose`.
/// Points behind the camera are outliers.
pub fn inliers(corrs: &Correspondences, k: &Intrinsics, pose: &Pose, threshold: f64) -> Vec<usize> {
    let r = pose.rotation_matrix();
    corrs
        .world
        .iter()
        .zip(&corrs.image)
        .enumerate()
        .filter_map(|(i, (z, x))| {
            let p = r * z + pose.trans;
            if p.z <= crate::geometry::DEPTH_EPSILON {
                return None;
            }
            let u = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
            ((u - x).norm() < threshold).then_some(i)
        })
        .collect()
}

struct Scored {
    pose: Pose,
    count: usize,
    error: f64,
}

fn score(corrs: &Correspondences, k: &Intrinsics, pose: Pose, threshold: f64) -> Scored {
    let idx = inliers(corrs, k, &pose, threshold);
    let r = pose.rotation_matrix();
    let error = idx
        .iter()
        .map(|&i| {
            let p = r * corrs.world[i] + pose.trans;
            let u = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
            (u - corrs.image[i]).norm_squared()
        })
        .sum();
    Scored {
        pose,
        count: idx.len(),
        error,
    }
}

/// Initial pose by RANSAC over minimal-solver hypotheses; maximizes the inlier count,
/// ties broken by the inlier reprojection error. When no hypothesis has an
/// inlier, returns the one with the lowest reprojection objective over all
/// points among those placing every point in front of the camera.
///
/// Samples hold `min(cfg.sample_size, n)` points and are drawn up front from
/// a seeded stream, so the result depends only on the inputs and `cfg`.
pub fn ransac_init(corrs: &Correspondences, k: &Intrinsics, cfg: &RansacConfig) -> Result<Pose> {
    cfg.validate()?;
    let n = corrs.len();
    if n < MIN_SAMPLE_POINTS {
        return Err(Error::TooFewPoints {
            required: MIN_SAMPLE_POINTS,
            actual: n,
        });
    }
    let sample_size = cfg.sample_size.min(n);
    let mut rng = stream_rng(cfg.seed, Stream::Ransac);
    let samples: Vec<Vec<usize>> = (0..cfg.iterations)
        .map(|_| index::sample(&mut rng, n, sample_size).into_vec())
        .collect();

    let refine_cfg = SolverConfig {
        max_iters: REFINE_STEPS,
        ..SolverConfig::default()
    };
    let mut best: Option<Scored> = None;
    let mut fallback: Option<(f64, Pose)> = None;
    for sample in &samples {
        let image: Vec<Vector2<f64>> = sample.iter().map(|&i| corrs.image[i]).collect();
        let world: Vec<Vector3<f64>> = sample.iter().map(|&i| corrs.world[i]).collect();
        let Ok(hyps) = minimal_solve(&image, &world, k) else {
            continue;
        };
        for hyp in hyps {
            let pose = match levenberg_marquardt(&image, &world, k, &hyp, &refine_cfg) {
                Ok(sol) => sol.pose,
                Err(_) => hyp,
            };
            if let Ok(o) = objective(&corrs.image, &corrs.world, &pose, k) {
                if o.is_finite() && fallback.as_ref().is_none_or(|(f, _)| o < *f) {
                    fallback = Some((o, pose));
                }
            }
            let s = score(corrs, k, pose, cfg.inlier_threshold);
            let better = match &best {
                None => s.count > 0,
                Some(b) => s.count > b.count || (s.count == b.count && s.error < b.error),
            };
            if better {
                best = Some(s);
            }
        }
        if best.as_ref().is_some_and(|b| b.count == n) {
            break;
        }
    }
    best.map(|b| b.pose)
        .or(fallback.map(|(_, pose)| pose))
        .ok_or(Error::NoHypothesisFound)
}
