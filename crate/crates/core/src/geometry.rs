//! Camera geometry: axis-angle rotations, pinhole projection and reprojection
//! residuals, with exact first- and second-order derivatives.
//!
//! A pose maps world points into the camera frame, `p_c = R(rot) z + trans`.
//! Projection is `u = fx X/Z + cx`, `v = fy Y/Z + cy`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, SMatrix, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::jet::{Jet1, Jet2, Scalar};

/// Points closer to the camera plane than this are rejected.
pub const DEPTH_EPSILON: f64 = 1e-8;

/// Dimension of the pose vector (axis-angle rotation + translation).
pub const POSE_DIM: usize = 6;

/// Number of variables seeded in second-order projection jets:
/// pose (6), point (3), intrinsics (4).
pub const JET_DIM: usize = 13;
pub const POINT_OFFSET: usize = 6;
pub const INTRINSICS_OFFSET: usize = 9;

/// Below this squared angle the rotation uses its Taylor expansion.
const SERIES_THETA2: f64 = 1e-4;
/// Distance from pi at which `log_rotation` switches to the diagonal branch.
const NEAR_PI: f64 = 1e-6;

/// Rigid world-to-camera transform parameterized as `[rot; trans]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation (unit axis scaled by the angle in radians).
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rot: Vector3<f64>, trans: Vector3<f64>) -> Self {
        Self { rot, trans }
    }

    pub fn identity() -> Self {
        Self {
            rot: Vector3::zeros(),
            trans: Vector3::zeros(),
        }
    }

    pub fn from_vector(y: &Vector6<f64>) -> Self {
        Self {
            rot: y.fixed_rows::<3>(0).into_owned(),
            trans: y.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rodrigues(&self.rot)
    }

    pub fn transform_point(&self, z: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * z + self.trans
    }

    /// Same rotation with its angle reduced to `[0, pi]`.
    pub fn canonical(&self) -> Self {
        Self {
            rot: canonicalize_rotation(&self.rot),
            trans: self.trans,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rot.iter().chain(self.trans.iter()).all(|v| v.is_finite())
    }
}

/// Reduces an axis-angle vector to the equivalent one with angle in `[0, pi]`.
pub fn canonicalize_rotation(rot: &Vector3<f64>) -> Vector3<f64> {
    let theta = rot.norm();
    if theta <= PI {
        return *rot;
    }
    let wrapped = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    rot * (wrapped / theta)
}

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("intrinsics must be finite".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn from_array(p: [f64; 4]) -> Self {
        Self {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, x: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((x.x - self.cx) / self.fx, (x.y - self.cy) / self.fy)
    }
}

/// Paired 2D observations and 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pub image: Vec<Vector2<f64>>,
    pub world: Vec<Vector3<f64>>,
}

impl Correspondences {
    pub const MIN_POINTS: usize = 4;

    pub fn new(image: Vec<Vector2<f64>>, world: Vec<Vector3<f64>>) -> Result<Self> {
        if image.len() != world.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} image points vs {} world points",
                image.len(),
                world.len()
            )));
        }
        if image.len() < Self::MIN_POINTS {
            return Err(Error::TooFewPoints {
                required: Self::MIN_POINTS,
                actual: image.len(),
            });
        }
        let finite = image.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && world.iter().all(|z| z.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput("coordinates must be finite".into()));
        }
        Ok(Self { image, world })
    }

    /// Builds from flat `[u0, v0, u1, v1, ...]` and `[x0, y0, z0, ...]` arrays.
    pub fn from_flat(x2d: &[f64], pts3d: &[f64]) -> Result<Self> {
        if !x2d.len().is_multiple_of(2) || !pts3d.len().is_multiple_of(3) {
            return Err(Error::ShapeMismatch(format!(
                "flat lengths {} and {} are not multiples of 2 and 3",
                x2d.len(),
                pts3d.len()
            )));
        }
        Self::new(unflatten2(x2d), unflatten3(pts3d))
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    pub fn x_flat(&self) -> DVector<f64> {
        flatten2(&self.image)
    }

    pub fn z_flat(&self) -> DVector<f64> {
        flatten3(&self.world)
    }
}

pub fn flatten2(v: &[Vector2<f64>]) -> DVector<f64> {
    DVector::from_iterator(v.len() * 2, v.iter().flat_map(|p| [p.x, p.y]))
}

pub fn flatten3(v: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(v.len() * 3, v.iter().flat_map(|p| [p.x, p.y, p.z]))
}

pub fn unflatten2(flat: &[f64]) -> Vec<Vector2<f64>> {
    flat.chunks_exact(2).map(|c| Vector2::new(c[0], c[1])).collect()
}

pub fn unflatten3(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

/// Rotation matrix entries for an axis-angle vector, row-major.
///
/// Uses `R = cos(t) I + a [w]x + b w w^T` with `a = sin(t)/t` and
/// `b = (1 - cos(t))/t^2`, both expanded in `t^2` near zero so that jets stay
/// exact at the identity.
pub(crate) fn rotation_entries<S: Scalar>(w: [S; 3]) -> [[S; 3]; 3] {
    let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let t2 = theta2.value();
    let (a, b) = if t2 < SERIES_THETA2 {
        let one = S::constant(1.0);
        let a =
            one - theta2 * (S::constant(1.0 / 6.0) - theta2 * (S::constant(1.0 / 120.0) - theta2.scale(1.0 / 5040.0)));
        let b = S::constant(0.5)
            - theta2 * (S::constant(1.0 / 24.0) - theta2 * (S::constant(1.0 / 720.0) - theta2.scale(1.0 / 40320.0)));
        (a, b)
    } else {
        let theta = theta2.sqrt();
        let s_half = theta.scale(0.5).sin();
        (theta.sin() / theta, (s_half * s_half).scale(2.0) / theta2)
    };
    let c = S::constant(1.0) - b * theta2;
    let [x, y, z] = w;
    let (bx, by, bz) = (b * x, b * y, b * z);
    let (ax, ay, az) = (a * x, a * y, a * z);
    [
        [c + bx * x, bx * y - az, bx * z + ay],
        [by * x + az, c + by * y, by * z - ax],
        [bz * x - ay, bz * y + ax, c + bz * z],
    ]
}

/// Projects one point given pre-built rotation entries. Returns the pixel and
/// the camera-frame depth.
#[inline]
pub(crate) fn project_point<S: Scalar>(r: &[[S; 3]; 3], t: &[S; 3], z: &[S; 3], k: &[S; 4]) -> ([S; 2], f64) {
    let p = [
        r[0][0] * z[0] + r[0][1] * z[1] + r[0][2] * z[2] + t[0],
        r[1][0] * z[0] + r[1][1] * z[1] + r[1][2] * z[2] + t[1],
        r[2][0] * z[0] + r[2][1] * z[1] + r[2][2] * z[2] + t[2],
    ];
    let depth = p[2].value();
    let inv_z = S::constant(1.0) / p[2];
    ([k[0] * p[0] * inv_z + k[2], k[1] * p[1] * inv_z + k[3]], depth)
}

fn check_depth(index: usize, depth: f64) -> Result<()> {
    if depth > DEPTH_EPSILON {
        Ok(())
    } else {
        Err(Error::PointBehindCamera { index, depth })
    }
}

/// SO(3) exponential of an axis-angle vector.
pub fn rodrigues(rot: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation_entries([rot.x, rot.y, rot.z]);
    Matrix3::from_fn(|i, j| r[i][j])
}

/// SO(3) logarithm. The result has norm in `[0, pi]`.
///
/// For a rotation by exactly pi the axis sign is ambiguous; the returned axis
/// has its largest-magnitude component positive.
pub fn log_rotation(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let orthogonality = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(orthogonality <= 1e-8 && (det - 1.0).abs() <= 1e-8) {
        return Err(Error::NotARotation { orthogonality, det });
    }

    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = vee.norm();
    let theta = sin.atan2(cos);

    if PI - theta < NEAR_PI {
        // R + I = 2 a a^T (+ O(pi - theta)); read the axis off the dominant column.
        let sym = (r + Matrix3::identity()) * 0.5;
        let k = (0..3).max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)])).unwrap_or(0);
        let mut axis = sym.column(k).into_owned() / sym[(k, k)].max(0.0).sqrt();
        axis.normalize_mut();
        let flip = if sin > 0.0 {
            axis.dot(&vee) < 0.0
        } else {
            let imax = axis.iamax();
            axis[imax] < 0.0
        };
        if flip {
            axis = -axis;
        }
        return Ok(axis * theta);
    }

    if theta < 1e-4 {
        // vee = sin(t)/t * w; divide by the series for sin(t)/t.
        let t2 = theta * theta;
        return Ok(vee / (1.0 - t2 / 6.0 + t2 * t2 / 120.0));
    }
    Ok(vee * (theta / sin))
}

fn pose_scalars<S: Scalar>(pose: &Pose, seed: impl Fn(f64, usize) -> S) -> ([[S; 3]; 3], [S; 3]) {
    let y = pose.to_vector();
    let w = [seed(y[0], 0), seed(y[1], 1), seed(y[2], 2)];
    let t = [seed(y[3], 3), seed(y[4], 4), seed(y[5], 5)];
    (rotation_entries(w), t)
}

/// Projects every point; returns the flat `[u0, v0, u1, v1, ...]` vector.
pub fn project(pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<DVector<f64>> {
    let (r, t) = pose_scalars(pose, |v, _| v);
    let kk = k.to_array();
    let mut out = DVector::zeros(2 * pts3d.len());
    for (i, z) in pts3d.iter().enumerate() {
        let (uv, depth) = project_point(&r, &t, &[z.x, z.y, z.z], &kk);
        check_depth(i, depth)?;
        out[2 * i] = uv[0];
        out[2 * i + 1] = uv[1];
    }
    Ok(out)
}

/// Whether every point lands strictly in front of the camera.
pub fn all_in_front(pts3d: &[Vector3<f64>], pose: &Pose) -> bool {
    if !pose.is_finite() {
        return false;
    }
    let r = pose.rotation_matrix();
    pts3d.iter().all(|z| (r * z + pose.trans).z > DEPTH_EPSILON)
}

/// Projection together with the pose Jacobian `d pi / d y` (2n x 6).
pub fn project_with_pose_jacobian(
    pts3d: &[Vector3<f64>],
    pose: &Pose,
    k: &Intrinsics,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (r, t) = pose_scalars(pose, Jet1::<6>::variable);
    let kk = k.to_array().map(Jet1::constant);
    let n = pts3d.len();
    let mut pi = DVector::zeros(2 * n);
    let mut jac = DMatrix::zeros(2 * n, POSE_DIM);
    for (i, z) in pts3d.iter().enumerate() {
        let zz = [z.x, z.y, z.z].map(Jet1::constant);
        let (uv, depth) = project_point(&r, &t, &zz, &kk);
        check_depth(i, depth)?;
        for a in 0..2 {
            pi[2 * i + a] = uv[a].v;
            jac.row_mut(2 * i + a).copy_from(&uv[a].g.transpose());
        }
    }
    Ok((pi, jac))
}

/// Projection and all of its first derivatives.
#[derive(Debug, Clone)]
pub struct ProjectionJet {
    /// Flat projected points (2n).
    pub pi: DVector<f64>,
    /// `d pi / d pose`, 2n x 6.
    pub d_pose: DMatrix<f64>,
    /// `d pi_i / d z_i`; the full 2n x 3n matrix is block diagonal in these.
    pub d_points: Vec<Matrix2x3<f64>>,
    /// `d pi / d (fx, fy, cx, cy)`, 2n x 4.
    pub d_intrinsics: DMatrix<f64>,
}

impl ProjectionJet {
    pub fn d_points_dense(&self) -> DMatrix<f64> {
        let n = self.d_points.len();
        let mut m = DMatrix::zeros(2 * n, 3 * n);
        for (i, b) in self.d_points.iter().enumerate() {
            m.fixed_view_mut::<2, 3>(2 * i, 3 * i).copy_from(b);
        }
        m
    }
}

pub fn project_with_jets(pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<ProjectionJet> {
    type J = Jet1<JET_DIM>;
    let (r, t) = pose_scalars(pose, J::variable);
    let kk = [
        J::variable(k.fx, INTRINSICS_OFFSET),
        J::variable(k.fy, INTRINSICS_OFFSET + 1),
        J::variable(k.cx, INTRINSICS_OFFSET + 2),
        J::variable(k.cy, INTRINSICS_OFFSET + 3),
    ];
    let n = pts3d.len();
    let mut jet = ProjectionJet {
        pi: DVector::zeros(2 * n),
        d_pose: DMatrix::zeros(2 * n, POSE_DIM),
        d_points: Vec::with_capacity(n),
        d_intrinsics: DMatrix::zeros(2 * n, 4),
    };
    for (i, z) in pts3d.iter().enumerate() {
        let zz = [
            J::variable(z.x, POINT_OFFSET),
            J::variable(z.y, POINT_OFFSET + 1),
            J::variable(z.z, POINT_OFFSET + 2),
        ];
        let (uv, depth) = project_point(&r, &t, &zz, &kk);
        check_depth(i, depth)?;
        let mut block = Matrix2x3::zeros();
        for a in 0..2 {
            let row = 2 * i + a;
            jet.pi[row] = uv[a].v;
            for j in 0..POSE_DIM {
                jet.d_pose[(row, j)] = uv[a].g[j];
            }
            for b in 0..3 {
                block[(a, b)] = uv[a].g[POINT_OFFSET + b];
            }
            for c in 0..4 {
                jet.d_intrinsics[(row, c)] = uv[a].g[INTRINSICS_OFFSET + c];
            }
        }
        jet.d_points.push(block);
    }
    Ok(jet)
}

/// Value, gradient and Hessian of one projected point with respect to
/// `[pose (6), point (3), fx, fy, cx, cy]`.
#[derive(Debug, Clone)]
pub struct PointSecondOrder {
    pub value: Vector2<f64>,
    pub grad: [SVector<f64, JET_DIM>; 2],
    pub hess: [SMatrix<f64, JET_DIM, JET_DIM>; 2],
}

/// Exact second-order expansion of each projected point.
pub fn project_second_order(pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<Vec<PointSecondOrder>> {
    type J = Jet2<JET_DIM>;
    let (r, t) = pose_scalars(pose, J::variable);
    let kk = [
        J::variable(k.fx, INTRINSICS_OFFSET),
        J::variable(k.fy, INTRINSICS_OFFSET + 1),
        J::variable(k.cx, INTRINSICS_OFFSET + 2),
        J::variable(k.cy, INTRINSICS_OFFSET + 3),
    ];
    pts3d
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let zz = [
                J::variable(z.x, POINT_OFFSET),
                J::variable(z.y, POINT_OFFSET + 1),
                J::variable(z.z, POINT_OFFSET + 2),
            ];
            let ([u, v], depth) = project_point(&r, &t, &zz, &kk);
            check_depth(i, depth)?;
            Ok(PointSecondOrder {
                value: Vector2::new(u.v, v.v),
                grad: [u.g, v.g],
                hess: [u.h, v.h],
            })
        })
        .collect()
}

/// Value, pose gradient and pose Hessian of one projected point.
#[derive(Debug, Clone)]
pub struct PointPoseSecondOrder {
    pub value: Vector2<f64>,
    pub grad: [Vector6<f64>; 2],
    pub hess: [Matrix6<f64>; 2],
}

/// Exact second-order expansion of each projected point in the pose only.
pub fn project_pose_second_order(
    pts3d: &[Vector3<f64>],
    pose: &Pose,
    k: &Intrinsics,
) -> Result<Vec<PointPoseSecondOrder>> {
    type J = Jet2<POSE_DIM>;
    let (r, t) = pose_scalars(pose, J::variable);
    let kk = k.to_array().map(J::constant);
    pts3d
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let ([u, v], depth) = project_point(&r, &t, &[z.x, z.y, z.z].map(J::constant), &kk);
            check_depth(i, depth)?;
            Ok(PointPoseSecondOrder {
                value: Vector2::new(u.v, v.v),
                grad: [u.g, v.g],
                hess: [u.h, v.h],
            })
        })
        .collect()
}

/// Reprojection residuals `r = x - pi`, flattened.
pub fn residuals(x2d: &[Vector2<f64>], pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<DVector<f64>> {
    if x2d.len() != pts3d.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} image points vs {} world points",
            x2d.len(),
            pts3d.len()
        )));
    }
    Ok(flatten2(x2d) - project(pts3d, pose, k)?)
}

/// Sum of squared reprojection residuals.
pub fn objective(x2d: &[Vector2<f64>], pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<f64> {
    Ok(residuals(x2d, pts3d, pose, k)?.norm_squared())
}

/// Sum of squared reprojection residuals evaluated in double-double
/// arithmetic. Orders two nearby poses correctly when their objectives differ
/// by less than the rounding error of [`objective`].
pub fn precise_objective(x2d: &[Vector2<f64>], pts3d: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<Dd> {
    if x2d.len() != pts3d.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} image points vs {} world points",
            x2d.len(),
            pts3d.len()
        )));
    }
    let (r, t) = pose_scalars(pose, |v, _| Dd::new(v));
    let kk = k.to_array().map(Dd::new);
    let mut sum = Dd::ZERO;
    for (i, (x, z)) in x2d.iter().zip(pts3d).enumerate() {
        let (uv, depth) = project_point(&r, &t, &[z.x, z.y, z.z].map(Dd::new), &kk);
        check_depth(i, depth)?;
        sum = sum + (Dd::new(x.x) - uv[0]).square() + (Dd::new(x.y) - uv[1]).square();
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k_fig() -> Intrinsics {
        Intrinsics::new(800.0, 700.0, 400.0, 300.0).unwrap()
    }

    #[test]
    fn rodrigues_special_values() {
        assert_eq!(rodrigues(&Vector3::zeros()), Matrix3::identity());
        let r = rodrigues(&Vector3::new(PI, 0.0, 0.0));
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!((r - expected).abs().max() < 1e-15);
    }

    #[test]
    fn log_rotation_special_values() {
        assert_eq!(log_rotation(&Matrix3::identity()).unwrap(), Vector3::zeros());
        let w = log_rotation(&Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        assert!((w - Vector3::new(PI, 0.0, 0.0)).norm() < 1e-12);
        // Just short of pi the sign follows the antisymmetric part.
        let v = Vector3::new(0.0, -(PI - 1e-7), 0.0);
        let back = log_rotation(&rodrigues(&v)).unwrap();
        assert!((back - v).norm() < 1e-6, "{back:?}");
    }

    #[test]
    fn log_rotation_rejects_non_rotations() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(log_rotation(&m), Err(Error::NotARotation { .. })));
        let m = Matrix3::identity() * 1.01;
        assert!(matches!(log_rotation(&m), Err(Error::NotARotation { .. })));
    }

    #[test]
    fn canonicalization_wraps_large_angles() {
        let axis = Vector3::new(1.0, 2.0, -2.0).normalize();
        let w = axis * (PI + 0.5);
        let c = canonicalize_rotation(&w);
        assert!((c.norm() - (PI - 0.5)).abs() < 1e-12);
        assert!((rodrigues(&c) - rodrigues(&w)).abs().max() < 1e-12);
        let small = axis * 0.3;
        assert_eq!(canonicalize_rotation(&small), small);
    }

    #[test]
    fn project_examples() {
        let id = Pose::identity();
        let unit = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let pi = project(&[Vector3::new(0.0, 0.0, 1.0)], &id, &unit).unwrap();
        assert_eq!(pi.as_slice(), &[0.0, 0.0]);

        let pi = project(&[Vector3::new(1.0, 2.0, 2.0)], &id, &k_fig()).unwrap();
        assert_eq!(pi.as_slice(), &[800.0, 1000.0]);

        let err = project(&[Vector3::new(0.0, 0.0, -1.0)], &id, &k_fig()).unwrap_err();
        assert!(matches!(err, Error::PointBehindCamera { index: 0, .. }));
        let err = project(
            &[Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 0.0)],
            &id,
            &k_fig(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::PointBehindCamera { index: 1, .. }));
    }

    #[test]
    fn cx_column_is_unit_u() {
        let pose = Pose::new(Vector3::new(0.1, -0.2, 0.05), Vector3::new(0.1, 0.0, 4.0));
        let pts = vec![
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(-0.3, 0.1, 0.0),
            Vector3::new(0.0, -0.2, 0.4),
        ];
        let jet = project_with_jets(&pts, &pose, &k_fig()).unwrap();
        for i in 0..pts.len() {
            assert_eq!(jet.d_intrinsics[(2 * i, 2)], 1.0);
            assert_eq!(jet.d_intrinsics[(2 * i + 1, 2)], 0.0);
            assert_eq!(jet.d_intrinsics[(2 * i, 3)], 0.0);
            assert_eq!(jet.d_intrinsics[(2 * i + 1, 3)], 1.0);
        }
        assert_eq!(jet.pi, project(&pts, &pose, &k_fig()).unwrap());
        let dense = jet.d_points_dense();
        assert_eq!(dense.shape(), (6, 9));
        assert_eq!(dense[(0, 3)], 0.0);
    }

    #[test]
    fn residual_sign_convention() {
        let pose = Pose::new(Vector3::new(0.0, 0.3, 0.0), Vector3::new(0.0, 0.0, 3.0));
        let pts = vec![Vector3::new(0.1, 0.2, 0.3), Vector3::new(-0.3, 0.1, 0.0)];
        let k = k_fig();
        let mut x = unflatten2(project(&pts, &pose, &k).unwrap().as_slice());
        assert!(residuals(&x, &pts, &pose, &k).unwrap().norm() == 0.0);
        x[1].x += 1.0;
        let r = residuals(&x, &pts, &pose, &k).unwrap();
        assert!((r[2] - 1.0).abs() < 1e-12 && r[3].abs() < 1e-12);
        assert!((objective(&x, &pts, &pose, &k).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correspondences_validate() {
        let img = vec![Vector2::zeros(); 3];
        let wld = vec![Vector3::zeros(); 3];
        assert!(matches!(
            Correspondences::new(img, wld),
            Err(Error::TooFewPoints { required: 4, actual: 3 })
        ));
        let mut img = vec![Vector2::zeros(); 4];
        img[2].x = f64::NAN;
        assert!(Correspondences::new(img, vec![Vector3::zeros(); 4]).is_err());
        assert!(Correspondences::from_flat(&[0.0; 8], &[0.0; 11]).is_err());
        let c = Correspondences::from_flat(&[1.0; 8], &[2.0; 12]).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.x_flat().len(), 8);
    }

    #[test]
    fn intrinsics_require_positive_focal() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        let k = k_fig();
        assert_eq!(k.matrix()[(0, 2)], 400.0);
        assert_eq!(k.matrix()[(1, 1)], 700.0);
        assert_eq!(k.matrix()[(2, 2)], 1.0);
    }
}
