//! Pose hypotheses from small samples: P3P for three to five points or
//! coplanar structure, linear DLT for six or more non-coplanar points.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::dlt::{centroid3, dlt_pose};
use super::p3p::p3p;
use crate::error::{Error, Result};
use crate::geometry::{objective, Intrinsics, Pose};

/// Fewest correspondences that determine a finite set of poses.
pub const MIN_SAMPLE_POINTS: usize = 3;

/// Fewest non-coplanar correspondences for the linear solver.
pub const DLT_MIN_POINTS: usize = 6;

/// Relative singular-value threshold for collinear / coplanar structure.
const RANK_TOL: f64 = 1e-6;

/// Rejects collinear 3D points and coincident 2D points; reports coplanarity.
fn check_degenerate(image: &[Vector2<f64>], world: &[Vector3<f64>]) -> Result<bool> {
    let c = centroid3(world);
    let spread = world
        .iter()
        .fold(Matrix3::zeros(), |acc, p| acc + (p - c) * (p - c).transpose());
    let mut s = spread.symmetric_eigenvalues();
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if s[0] <= 0.0 || s[1] <= RANK_TOL * RANK_TOL * s[0] {
        return Err(Error::Degenerate("3D points are collinear"));
    }
    let scale = image.iter().map(|x| x.amax()).fold(1.0, f64::max);
    for (i, a) in image.iter().enumerate() {
        for b in &image[i + 1..] {
            if (a - b).norm() <= 1e-9 * scale {
                return Err(Error::Degenerate("coincident 2D points"));
            }
        }
    }
    Ok(s[2] <= RANK_TOL * RANK_TOL * s[0])
}

/// Indices of a well-spread triple: the farthest pair plus the point that
/// maximizes the triangle area with it.
fn spread_triple(world: &[Vector3<f64>]) -> [usize; 3] {
    let n = world.len();
    let mut pair = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = (world[i] - world[j]).norm_squared();
            if d > pair.2 {
                pair = (i, j, d);
            }
        }
    }
    let (i, j, _) = pair;
    let edge = world[j] - world[i];
    let third = (0..n)
        .filter(|&m| m != i && m != j)
        .max_by(|&a, &b| {
            let area = |m: usize| edge.cross(&(world[m] - world[i])).norm_squared();
            area(a).total_cmp(&area(b))
        })
        .expect("at least three points");
    [i, j, third]
}

/// Pose hypotheses from a small sample, best sample reprojection first.
///
/// Six or more non-coplanar points give the single linear solution; smaller
/// or coplanar samples give up to four P3P solutions from a spread triple.
/// An empty result means no solution places the sample in front of the camera.
pub fn minimal_solve(image: &[Vector2<f64>], world: &[Vector3<f64>], k: &Intrinsics) -> Result<Vec<Pose>> {
    let n = world.len();
    if image.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "sample has {} 2D and {n} 3D points",
            image.len()
        )));
    }
    if n < MIN_SAMPLE_POINTS {
        return Err(Error::TooFewPoints {
            required: MIN_SAMPLE_POINTS,
            actual: n,
        });
    }
    let coplanar = check_degenerate(image, world)?;
    if n >= DLT_MIN_POINTS && !coplanar {
        return Ok(dlt_pose(image, world, k)?.into_iter().collect());
    }
    let [a, b, c] = spread_triple(world);
    let hyps = p3p(&[image[a], image[b], image[c]], &[world[a], world[b], world[c]], k);
    let mut scored: Vec<(f64, Pose)> = hyps
        .into_iter()
        .filter_map(|p| {
            let o = objective(image, world, &p, k).ok()?;
            o.is_finite().then_some((o, p))
        })
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}
