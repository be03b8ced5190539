//! Similarity alignment of point sets (Umeyama's closed form).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `target ≈ scale * rotation * source + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares similarity mapping `source` onto `target`.
pub fn umeyama(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Similarity> {
    if source.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            actual: source.len(),
        });
    }
    let n = source.len() as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() / n;
    let mu_t = target.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s - mu_s, t - mu_t);
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if !(var_s > 0.0) {
        return Err(Error::Degenerate("source points are coincident"));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("SVD of the cross-covariance failed".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_s;
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_t - rotation * mu_s * scale,
    })
}

/// RMS distance between `target` and `source` after similarity alignment,
/// over the points in `keep` (all points when `None`).
pub fn aligned_rmse(source: &[Vector3<f64>], target: &[Vector3<f64>], keep: Option<&[usize]>) -> Result<f64> {
    let idx: Vec<usize> = match keep {
        Some(k) => k.to_vec(),
        None => (0..source.len()).collect(),
    };
    let s: Vec<_> = idx.iter().map(|&i| source[i]).collect();
    let t: Vec<_> = idx.iter().map(|&i| target[i]).collect();
    let sim = umeyama(&s, &t)?;
    let sq: f64 = s.iter().zip(&t).map(|(a, b)| (sim.apply(a) - b).norm_squared()).sum();
    Ok((sq / s.len() as f64).sqrt())
}
