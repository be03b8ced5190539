//! Linear pose from six or more non-coplanar correspondences (calibrated DLT).

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{log_rotation, Intrinsics, Pose};

pub(crate) fn centroid3(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().sum::<Vector3<f64>>() / pts.len() as f64
}

/// The DLT pose, or `None` when it places a point behind the camera.
/// Expects at least six non-degenerate, non-coplanar points.
pub(crate) fn dlt_pose(image: &[Vector2<f64>], world: &[Vector3<f64>], k: &Intrinsics) -> Result<Option<Pose>> {
    let n = world.len();

    // Hartley normalization on both sides.
    let c3 = centroid3(world);
    let s3 = world.iter().map(|p| (p - c3).norm()).sum::<f64>() / n as f64 / 3f64.sqrt();
    let rays: Vec<Vector2<f64>> = image.iter().map(|x| k.normalize(x)).collect();
    let c2 = rays.iter().sum::<Vector2<f64>>() / n as f64;
    let s2 = (rays.iter().map(|m| (m - c2).norm()).sum::<f64>() / n as f64 / 2f64.sqrt()).max(1e-300);

    let mut a = DMatrix::zeros(2 * n, 12);
    for i in 0..n {
        let p = (world[i] - c3) / s3;
        let m = (rays[i] - c2) / s2;
        let hom = [p.x, p.y, p.z, 1.0];
        for c in 0..4 {
            a[(2 * i, c)] = hom[c];
            a[(2 * i, 8 + c)] = -m.x * hom[c];
            a[(2 * i + 1, 4 + c)] = hom[c];
            a[(2 * i + 1, 8 + c)] = -m.y * hom[c];
        }
    }
    // The null vector of A is the eigenvector of A^T A with the smallest eigenvalue.
    let ata = a.tr_mul(&a);
    let eig = ata.symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(imin);
    let p_norm = Matrix3x4::from_fn(|r, c| v[4 * r + c]);

    let t2_inv = Matrix3::new(s2, 0.0, c2.x, 0.0, s2, c2.y, 0.0, 0.0, 1.0);
    let mut t3 = Matrix4::identity() / s3;
    t3[(3, 3)] = 1.0;
    t3.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c3 / s3));
    let mut p = t2_inv * p_norm * t3;

    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::NumericalFailure("SVD of DLT rotation block failed".into()));
    };
    let scale = svd.singular_values.sum() / 3.0;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate("DLT solution has zero scale"));
    }
    let rot = u * v_t;
    let trans = p.column(3) / scale;

    let in_front = world.iter().all(|z| (rot * z + trans).z > 0.0);
    if !in_front {
        return Ok(None);
    }
    let rot = log_rotation(&rot)?;
    Ok(Some(Pose::new(rot, trans)))
}
