//! Backward pass through the PnP solver by implicit differentiation.
//!
//! At a solver output `y` the objective `o = sum_i |x_i - pi_i|^2` is
//! stationary, so `f(x, y, z, K) = d o / d y = 0`. Differentiating that
//! identity gives `d g / d a = -[d f / d y]^-1 [d f / d a]` for each input
//! `a` in `{x, z, K}`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6xX, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    flatten2, project_second_order, project_with_pose_jacobian, Correspondences, Intrinsics, Pose, INTRINSICS_OFFSET,
    POINT_OFFSET, POSE_DIM,
};
use crate::pnp::{solve_pnp, PnPSolution, SolverConfig};

/// Largest accepted condition number of `d f / d y`.
pub const COND_MAX: f64 = 1e12;

/// Jacobians of the stationarity constraint `f` (6 rows each).
#[derive(Debug, Clone)]
pub struct ConstraintJacobians {
    /// Hessian of the objective with respect to the pose.
    pub df_dy: Matrix6<f64>,
    pub df_dx: Matrix6xX<f64>,
    pub df_dz: Matrix6xX<f64>,
    /// With respect to `(fx, fy, cx, cy)`.
    pub df_dk: Matrix6xX<f64>,
}

/// Jacobians of the solver output with respect to each input.
#[derive(Debug, Clone)]
pub struct ImplicitJacobians {
    pub dg_dx: Matrix6xX<f64>,
    pub dg_dz: Matrix6xX<f64>,
    pub dg_dk: Matrix6xX<f64>,
    /// 2-norm condition number of `d f / d y`.
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad_x: DVector<f64>,
    pub grad_z: DVector<f64>,
    pub grad_k: Vector4<f64>,
    pub conditioning: f64,
}

fn check_shapes(x2d: &[Vector2<f64>], pts3d: &[Vector3<f64>]) -> Result<()> {
    if x2d.len() == pts3d.len() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{} image points vs {} world points",
            x2d.len(),
            pts3d.len()
        )))
    }
}

/// `f_j = d o / d y_j = sum_i <r_i, c_ij>` with `c_ij = -2 d pi_i / d y_j`.
pub fn constraint_f(x2d: &[Vector2<f64>], pose: &Pose, pts3d: &[Vector3<f64>], k: &Intrinsics) -> Result<Vector6<f64>> {
    check_shapes(x2d, pts3d)?;
    let (pi, jac) = project_with_pose_jacobian(pts3d, pose, k)?;
    let r = flatten2(x2d) - pi;
    let f = jac.tr_mul(&r) * -2.0;
    Ok(Vector6::from_iterator(f.iter().copied()))
}

/// Exact Jacobians of `f` from second-order projection jets.
pub fn constraint_jacobians(
    x2d: &[Vector2<f64>],
    pose: &Pose,
    pts3d: &[Vector3<f64>],
    k: &Intrinsics,
) -> Result<ConstraintJacobians> {
    check_shapes(x2d, pts3d)?;
    let n = pts3d.len();
    let jets = project_second_order(pts3d, pose, k)?;
    let mut out = ConstraintJacobians {
        df_dy: Matrix6::zeros(),
        df_dx: Matrix6xX::zeros(2 * n),
        df_dz: Matrix6xX::zeros(3 * n),
        df_dk: Matrix6xX::zeros(4),
    };
    for (i, (jet, x)) in jets.iter().zip(x2d).enumerate() {
        let r = x - jet.value;
        for a in 0..2 {
            let (g, h) = (&jet.grad[a], &jet.hess[a]);
            // d f_j / d v = 2 <d pi/d y_j, d pi/d v> - 2 r . d^2 pi / d y_j d v
            for j in 0..POSE_DIM {
                let gj = g[j];
                for l in 0..POSE_DIM {
                    out.df_dy[(j, l)] += 2.0 * (gj * g[l] - r[a] * h[(j, l)]);
                }
                out.df_dx[(j, 2 * i + a)] = -2.0 * gj;
                for b in 0..3 {
                    let v = POINT_OFFSET + b;
                    out.df_dz[(j, 3 * i + b)] += 2.0 * (gj * g[v] - r[a] * h[(j, v)]);
                }
                for c in 0..4 {
                    let v = INTRINSICS_OFFSET + c;
                    out.df_dk[(j, c)] += 2.0 * (gj * g[v] - r[a] * h[(j, v)]);
                }
            }
        }
    }
    Ok(out)
}

pub fn condition_number(m: &Matrix6<f64>) -> f64 {
    let s = m.singular_values();
    let (max, min) = (s.max(), s.min());
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Solves `df_dy * dg = -df_da` for each input with a column-pivoted QR.
pub fn implicit_jacobians(jac: &ConstraintJacobians) -> Result<ImplicitJacobians> {
    implicit_jacobians_with(jac, COND_MAX)
}

pub fn implicit_jacobians_with(jac: &ConstraintJacobians, cond_max: f64) -> Result<ImplicitJacobians> {
    let condition = condition_number(&jac.df_dy);
    if !(condition <= cond_max) {
        return Err(Error::SingularStationaryHessian { condition });
    }
    let qr = jac.df_dy.col_piv_qr();
    let solve = |rhs: &Matrix6xX<f64>| -> Result<Matrix6xX<f64>> {
        qr.solve(&(-rhs)).ok_or(Error::SingularStationaryHessian { condition })
    };
    Ok(ImplicitJacobians {
        dg_dx: solve(&jac.df_dx)?,
        dg_dz: solve(&jac.df_dz)?,
        dg_dk: solve(&jac.df_dk)?,
        condition,
    })
}

/// Vector-Jacobian products of an upstream pose gradient.
pub fn backward(jac_g: &ImplicitJacobians, grad_y: &Vector6<f64>) -> GradientBundle {
    let gk = jac_g.dg_dk.tr_mul(grad_y);
    GradientBundle {
        grad_x: jac_g.dg_dx.tr_mul(grad_y),
        grad_z: jac_g.dg_dz.tr_mul(grad_y),
        grad_k: Vector4::new(gk[0], gk[1], gk[2], gk[3]),
        conditioning: jac_g.condition,
    }
}

/// Implicit Jacobians at a converged forward solution.
pub fn solution_jacobians(
    corrs: &Correspondences,
    k: &Intrinsics,
    solution: &PnPSolution,
) -> Result<ImplicitJacobians> {
    if !solution.converged {
        return Err(Error::NotConverged);
    }
    let jac = constraint_jacobians(&corrs.image, &solution.pose, &corrs.world, k)?;
    implicit_jacobians(&jac)
}

/// Which solver input a finite-difference Jacobian is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// 2D observations, dimension 2n.
    X,
    /// 3D points, dimension 3n.
    Z,
    /// Intrinsics `(fx, fy, cx, cy)`, dimension 4.
    K,
}

impl InputKind {
    pub const ALL: [InputKind; 3] = [InputKind::X, InputKind::Z, InputKind::K];

    pub fn dim(self, n: usize) -> usize {
        match self {
            InputKind::X => 2 * n,
            InputKind::Z => 3 * n,
            InputKind::K => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputKind::X => "x",
            InputKind::Z => "z",
            InputKind::K => "K",
        }
    }
}

impl ImplicitJacobians {
    pub fn get(&self, which: InputKind) -> &Matrix6xX<f64> {
        match which {
            InputKind::X => &self.dg_dx,
            InputKind::Z => &self.dg_dz,
            InputKind::K => &self.dg_dk,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdJacobian {
    pub jacobian: DMatrix<f64>,
    pub solver_calls: usize,
    pub seconds: f64,
}

fn perturbed(
    corrs: &Correspondences,
    k: &Intrinsics,
    which: InputKind,
    idx: usize,
    delta: f64,
) -> (Correspondences, Intrinsics) {
    let mut c = corrs.clone();
    let mut kk = *k;
    match which {
        InputKind::X => c.image[idx / 2][idx % 2] += delta,
        InputKind::Z => c.world[idx / 3][idx % 3] += delta,
        InputKind::K => {
            let mut a = kk.to_array();
            a[idx] += delta;
            kk = Intrinsics::from_array(a);
        }
    }
    (c, kk)
}

/// Central-difference Jacobian of the solver output, re-solving the PnP
/// problem twice per input coordinate. Every perturbed solve is warm-started
/// from `base`'s pose so that it tracks the same local minimum.
pub fn fd_jacobian_oracle(
    corrs: &Correspondences,
    k: &Intrinsics,
    base: &PnPSolution,
    which: InputKind,
    step: f64,
    cfg: &SolverConfig,
) -> Result<FdJacobian> {
    if !base.converged {
        return Err(Error::NotConverged);
    }
    let start = Instant::now();
    let dim = which.dim(corrs.len());
    let mut jacobian = DMatrix::zeros(POSE_DIM, dim);
    let mut solver_calls = 0;
    for idx in 0..dim {
        let mut side = |delta: f64| -> Result<Vector6<f64>> {
            let (c, kk) = perturbed(corrs, k, which, idx, delta);
            solver_calls += 1;
            Ok(solve_pnp(&c, &kk, &base.pose, cfg)?.pose.to_vector())
        };
        let plus = side(step)?;
        let minus = side(-step)?;
        jacobian.column_mut(idx).copy_from(&((plus - minus) / (2.0 * step)));
    }
    Ok(FdJacobian {
        jacobian,
        solver_calls,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Entrywise absolute differences normalized by the largest reference entry.
pub fn normalized_errors(approx: &DMatrix<f64>, reference: &DMatrix<f64>) -> Vec<f64> {
    let scale = reference.amax().max(f64::MIN_POSITIVE);
    approx
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).abs() / scale)
        .collect()
}

/// `max |A - B| / max |B|`.
pub fn max_relative_error(approx: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    assert_eq!(approx.shape(), reference.shape());
    normalized_errors(approx, reference).into_iter().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, unflatten2};

    fn instance() -> (Vec<Vector2<f64>>, Pose, Vec<Vector3<f64>>, Intrinsics) {
        let pts = vec![
            Vector3::new(0.1, 0.2, -0.3),
            Vector3::new(-0.4, 0.1, 0.2),
            Vector3::new(0.3, -0.3, 0.1),
            Vector3::new(0.0, 0.4, 0.4),
            Vector3::new(-0.2, -0.1, -0.4),
        ];
        let pose = Pose::new(Vector3::new(0.3, -0.5, 0.2), Vector3::new(0.1, -0.2, 3.0));
        let k = Intrinsics::new(800.0, 700.0, 400.0, 300.0).unwrap();
        let x = unflatten2(project(&pts, &pose, &k).unwrap().as_slice());
        (x, pose, pts, k)
    }

    #[test]
    fn f_vanishes_at_zero_residual() {
        let (x, pose, pts, k) = instance();
        assert_eq!(constraint_f(&x, &pose, &pts, &k).unwrap(), Vector6::zeros());
    }

    #[test]
    fn df_dx_is_c_ij() {
        let (mut x, pose, pts, k) = instance();
        x[0].x += 3.0;
        let jac = constraint_jacobians(&x, &pose, &pts, &k).unwrap();
        let (_, dpi) = project_with_pose_jacobian(&pts, &pose, &k).unwrap();
        for i in 0..pts.len() {
            for a in 0..2 {
                for j in 0..6 {
                    let expected = -2.0 * dpi[(2 * i + a, j)];
                    assert!((jac.df_dx[(j, 2 * i + a)] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn backward_is_linear_in_grad_y() {
        let (x, pose, pts, k) = instance();
        let jac = constraint_jacobians(&x, &pose, &pts, &k).unwrap();
        let g = implicit_jacobians(&jac).unwrap();
        let zero = backward(&g, &Vector6::zeros());
        assert!(zero.grad_x.iter().chain(zero.grad_z.iter()).all(|v| *v == 0.0));
        assert_eq!(zero.grad_k, Vector4::zeros());
        for j in 0..6 {
            let b = backward(&g, &Vector6::ith(j, 1.0));
            assert_eq!(b.grad_x, g.dg_dx.row(j).transpose());
            assert_eq!(b.grad_z, g.dg_dz.row(j).transpose());
            assert_eq!(b.grad_k, g.dg_dk.row(j).transpose());
        }
    }

    #[test]
    fn non_converged_solutions_are_rejected() {
        let (x, pose, pts, k) = instance();
        let corrs = Correspondences::new(x, pts).unwrap();
        let sol = PnPSolution {
            pose,
            objective: 0.0,
            stationarity_norm: 1.0,
            iterations: 100,
            converged: false,
            history: vec![],
        };
        assert!(matches!(solution_jacobians(&corrs, &k, &sol), Err(Error::NotConverged)));
        assert!(matches!(
            fd_jacobian_oracle(&corrs, &k, &sol, InputKind::X, 1e-5, &SolverConfig::default()),
            Err(Error::NotConverged)
        ));
    }

    #[test]
    fn relative_error_is_normalized_by_reference() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 10.5]);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 10.0]);
        assert!((max_relative_error(&a, &b) - 0.05).abs() < 1e-15);
    }
}
