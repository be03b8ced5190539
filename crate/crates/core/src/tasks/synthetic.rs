//! Seeded synthetic scenes: a point cloud, cameras looking at it, and the
//! per-frame observations they produce.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sfm::{FrameObservation, SfmProblem};
use crate::error::{Error, Result};
use crate::geometry::{log_rotation, Correspondences, Intrinsics, Pose};
use crate::rng::{stream_rng, Stream};

/// Smallest number of points a frame may observe.
pub const MIN_VISIBLE: usize = 6;

/// Allowed camera depth of every point, in model diameters.
pub const DEPTH_RANGE: [f64; 2] = [2.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Number of 3D points (ignored when points are supplied).
    pub n: usize,
    pub frames: usize,
    /// Standard deviation of Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Fraction of points each frame observes.
    pub visibility: f64,
    /// Camera distance from the cloud centre, in model diameters.
    pub distance_range: [f64; 2],
    pub intrinsics: Intrinsics,
    pub seed: u64,
    /// Attempts per camera pose, and visibility repairs per point.
    pub max_retries: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n: 8,
            frames: 1,
            noise_sigma: 0.0,
            visibility: 1.0,
            distance_range: [2.5, 4.0],
            intrinsics: Intrinsics {
                fx: 800.0,
                fy: 700.0,
                cx: 400.0,
                cy: 300.0,
            },
            seed: 0,
            max_retries: 100,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let [lo, hi] = self.distance_range;
        let problems = [
            (self.n < 4, "at least 4 points are required"),
            (self.frames == 0, "at least one frame is required"),
            (
                !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()),
                "noise must be finite and >= 0",
            ),
            (
                !(self.visibility > 0.0 && self.visibility <= 1.0),
                "visibility must lie in (0, 1]",
            ),
            (!(lo > 0.0 && hi >= lo && hi.is_finite()), "invalid distance range"),
            (self.max_retries == 0, "retry budget must be positive"),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::InvalidInput((*msg).into())),
            None => Ok(()),
        }
    }

    /// Points observed per frame.
    pub fn visible_count(&self, n: usize) -> usize {
        ((self.visibility * n as f64).round() as usize).clamp(MIN_VISIBLE.min(n), n)
    }
}

/// Ground truth plus observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<Vector3<f64>>,
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
    pub frames: Vec<FrameObservation>,
    /// Largest pairwise distance between ground-truth points.
    pub diameter: f64,
}

impl Scene {
    pub fn problem(&self) -> SfmProblem {
        SfmProblem {
            intrinsics: self.intrinsics,
            num_points: self.points.len(),
            frames: self.frames.clone(),
        }
    }

    /// Observations of `frame` paired with their ground-truth 3D points.
    pub fn correspondences(&self, frame: usize) -> Result<Correspondences> {
        let obs = &self.frames[frame];
        Correspondences::new(obs.image.clone(), obs.indices.iter().map(|&i| self.points[i]).collect())
    }
}

pub fn diameter(points: &[Vector3<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm());
        }
    }
    d
}

/// A scene over `spec.n` points drawn uniformly from a unit-diameter ball.
pub fn generate_synthetic(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::DataGen);
    let points = (0..spec.n)
        .map(|_| loop {
            let p = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            if p.norm() <= 0.5 {
                break p;
            }
        })
        .collect();
    generate_from_points(points, spec)
}

/// A scene over caller-supplied points (e.g. mesh vertices).
pub fn generate_from_points(points: Vec<Vector3<f64>>, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    if points.len() < 4 || points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput("scene needs at least 4 finite points".into()));
    }
    let n = points.len();
    let diam = diameter(&points);
    if !(diam > 0.0) {
        return Err(Error::InvalidInput("scene points are coincident".into()));
    }
    let centre = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut rng = stream_rng(spec.seed, Stream::Cameras);
    let poses = (0..spec.frames)
        .map(|_| sample_pose(&points, centre, diam, spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let masks = sample_masks(n, spec)?;
    let k = spec.intrinsics;
    let mut noise_rng = stream_rng(spec.seed, Stream::Noise);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let frames = poses
        .iter()
        .zip(masks)
        .map(|(pose, indices)| {
            let r = pose.rotation_matrix();
            let image = indices
                .iter()
                .map(|&i| {
                    let p = r * points[i] + pose.trans;
                    let mut u = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
                    if spec.noise_sigma > 0.0 {
                        u += Vector2::new(noise.sample(&mut noise_rng), noise.sample(&mut noise_rng));
                    }
                    u
                })
                .collect();
            FrameObservation { indices, image }
        })
        .collect();
    Ok(Scene {
        points,
        intrinsics: k,
        poses,
        frames,
        diameter: diam,
    })
}

/// A camera on a sphere around `centre` looking at it with random roll.
fn sample_pose<R: Rng>(
    points: &[Vector3<f64>],
    centre: Vector3<f64>,
    diam: f64,
    spec: &SceneSpec,
    rng: &mut R,
) -> Result<Pose> {
    let [lo, hi] = spec.distance_range;
    for _ in 0..spec.max_retries {
        let dir = random_unit(rng);
        let dist = diam * if hi > lo { rng.random_range(lo..hi) } else { lo };
        let eye = centre + dir * dist;
        let forward = -dir;
        let helper = random_unit(rng);
        let side = helper - forward * helper.dot(&forward);
        if side.norm() < 1e-6 {
            continue;
        }
        let r1 = side.normalize();
        let r2 = forward.cross(&r1);
        let rot = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), forward.transpose()]);
        let pose = Pose::new(log_rotation(&rot)?, -(rot * eye));
        let r = pose.rotation_matrix();
        let depths_ok = points.iter().all(|z| {
            let d = (r * z + pose.trans).z / diam;
            (DEPTH_RANGE[0]..=DEPTH_RANGE[1]).contains(&d)
        });
        if depths_ok {
            return Ok(pose);
        }
    }
    Err(Error::GenerationFailed(format!(
        "no camera at distance {lo}..{hi} diameters keeps every point at depth {}..{} within {} attempts",
        DEPTH_RANGE[0], DEPTH_RANGE[1], spec.max_retries
    )))
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let norm = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

/// Sorted visible indices per frame. With two or more frames every point
/// is seen at least twice: under-observed points are swapped into frames
/// that lack them, displacing a point that keeps enough views.
fn sample_masks(n: usize, spec: &SceneSpec) -> Result<Vec<Vec<usize>>> {
    let count = spec.visible_count(n);
    let needed = if spec.frames >= 2 { 2 } else { 1 };
    let fail = || {
        Error::GenerationFailed(format!(
            "could not give every point {needed} views with {count} of {n} visible in each of {} frames",
            spec.frames
        ))
    };
    if count * spec.frames < needed * n {
        return Err(fail());
    }
    let mut rng = stream_rng(spec.seed, Stream::Visibility);
    let mut masks: Vec<Vec<bool>> = (0..spec.frames)
        .map(|_| {
            let mut m = vec![false; n];
            index::sample(&mut rng, n, count).into_iter().for_each(|i| m[i] = true);
            m
        })
        .collect();
    let mut seen: Vec<usize> = (0..n).map(|i| masks.iter().filter(|m| m[i]).count()).collect();
    for _ in 0..spec.max_retries * n {
        let Some(p) = (0..n).find(|&i| seen[i] < needed) else {
            return Ok(masks.iter().map(|m| (0..n).filter(|&i| m[i]).collect()).collect());
        };
        let lacking: Vec<usize> = (0..spec.frames).filter(|&j| !masks[j][p]).collect();
        let j = lacking[rng.random_range(0..lacking.len())];
        let donors: Vec<usize> = (0..n).filter(|&i| masks[j][i] && seen[i] > needed).collect();
        if donors.is_empty() {
            continue;
        }
        let d = donors[rng.random_range(0..donors.len())];
        masks[j][d] = false;
        masks[j][p] = true;
        seen[d] -= 1;
        seen[p] += 1;
    }
    Err(fail())
}
