//! Pose from three correspondences (Grunert's elimination).
//!
//! With depths `s_i` along unit bearings `b_i`, the law of cosines gives one
//! equation per pair of points. Writing `s2 = u s1`, `s3 = v s1` and
//! eliminating `s1` and then `u` leaves a quartic in `v`; every positive real
//! root yields one pose.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::geometry::{log_rotation, Intrinsics, Pose};

/// Coefficients, lowest degree first.
type Poly = [f64; 5];

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = [0.0; 5];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            if ai != 0.0 && bj != 0.0 {
                out[i + j] += ai * bj;
            }
        }
    }
    out
}

fn poly_lin(terms: &[(f64, &Poly)]) -> Poly {
    let mut out = [0.0; 5];
    for (c, p) in terms {
        for i in 0..5 {
            out[i] += c * p[i];
        }
    }
    out
}

fn poly_eval(p: &Poly, x: f64) -> (f64, f64) {
    let (mut v, mut d) = (0.0, 0.0);
    for &c in p.iter().rev() {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

/// Real roots of `p`, polished by Newton steps.
fn real_roots(p: &Poly) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let Some(degree) = (1..5).rev().find(|&d| p[d].abs() > 1e-12 * scale) else {
        return Vec::new();
    };
    let lead = p[degree];
    let companion = DMatrix::from_fn(degree, degree, |r, c| {
        if r == 0 {
            -p[degree - 1 - c] / lead
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..4 {
                let (v, d) = poly_eval(p, x);
                if d == 0.0 {
                    break;
                }
                x -= v / d;
            }
            x
        })
        .filter(|x| x.is_finite() && poly_eval(p, *x).0.abs() <= 1e-6 * scale * (1.0 + x.abs().powi(4)))
        .collect()
}

/// `R, t` with `cam_i = R world_i + t` for three non-collinear pairs.
fn absolute_orientation(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let h = (0..3).fold(Matrix3::zeros(), |acc, i| {
        acc + (world[i] - cw) * (cam[i] - cc).transpose()
    });
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    Some((r, cc - r * cw))
}

/// All poses consistent with three correspondences (at most four).
pub(crate) fn p3p(image: &[Vector2<f64>; 3], world: &[Vector3<f64>; 3], k: &Intrinsics) -> Vec<Pose> {
    let bearing = |x: &Vector2<f64>| {
        let m = k.normalize(x);
        Vector3::new(m.x, m.y, 1.0).normalize()
    };
    let b = [bearing(&image[0]), bearing(&image[1]), bearing(&image[2])];
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if b2 == 0.0 {
        return Vec::new();
    }
    let (cos_a, cos_b, cos_g) = (b[1].dot(&b[2]), b[0].dot(&b[2]), b[0].dot(&b[1]));

    // q(v) = 1 + v^2 - 2 v cos_b, so that s1^2 = b^2 / q(v).
    let q: Poly = [1.0, -2.0 * cos_b, 1.0, 0.0, 0.0];
    let v2: Poly = [0.0, 0.0, 1.0, 0.0, 0.0];
    let one: Poly = [1.0, 0.0, 0.0, 0.0, 0.0];
    // u = n(v) / d(v) from the difference of the (1,2) and (2,3) equations.
    let n = poly_lin(&[(1.0, &v2), (-a2 / b2, &q), (-1.0, &one), (c2 / b2, &q)]);
    let d: Poly = [-2.0 * cos_g, 2.0 * cos_a, 0.0, 0.0, 0.0];
    // (1,2) equation times d^2: n^2 - 2 cos_g n d + (1 - c^2/b^2 q) d^2 = 0.
    let one_minus_kc = poly_lin(&[(1.0, &one), (-c2 / b2, &q)]);
    let quartic = poly_lin(&[
        (1.0, &poly_mul(&n, &n)),
        (-2.0 * cos_g, &poly_mul(&n, &d)),
        (1.0, &poly_mul(&one_minus_kc, &poly_mul(&d, &d))),
    ]);

    let mut poses = Vec::new();
    for v in real_roots(&quartic) {
        let dv = poly_eval(&d, v).0;
        let qv = poly_eval(&q, v).0;
        if v <= 0.0 || dv.abs() < 1e-12 || qv <= 0.0 {
            continue;
        }
        let u = poly_eval(&n, v).0 / dv;
        if u <= 0.0 {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let cam = [b[0] * s1, b[1] * (u * s1), b[2] * (v * s1)];
        let Some((r, t)) = absolute_orientation(world, &cam) else {
            continue;
        };
        let Ok(rot) = log_rotation(&r) else {
            continue;
        };
        let pose = Pose::new(rot, t);
        if pose.is_finite() {
            poses.push(pose);
        }
    }
    poses
}
