use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::geometry::{
    canonicalize_rotation, precise_objective, project_pose_second_order, Correspondences, Intrinsics, Pose,
};

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Converged once `max |d o / d y| <= grad_tol`.
    pub grad_tol: f64,
    /// An accepted step shorter than this that leaves the objective
    /// unchanged ends the solve.
    pub step_tol: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters >= 1
            && self.grad_tol > 0.0
            && self.step_tol > 0.0
            && self.lambda_init > 0.0
            && self.lambda_up > 1.0
            && self.lambda_down > 0.0
            && self.lambda_down < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver config {self:?}")))
        }
    }
}

/// Output of the forward solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPSolution {
    pub pose: Pose,
    /// Sum of squared reprojection residuals at `pose` (pixels^2).
    pub objective: f64,
    /// `max |d o / d y|` at `pose`.
    pub stationarity_norm: f64,
    /// Number of attempted (accepted or rejected) LM steps.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the initial evaluation and after every accepted step.
    pub history: Vec<f64>,
}

const LAMBDA_MAX: f64 = 1e32;
const LAMBDA_MIN: f64 = 1e-20;

struct Linearization {
    /// Objective in double-double; steps are accepted on this value so that
    /// decreases below `f64` rounding noise are still ordered correctly.
    objective: Dd,
    /// `J^T r` with `J = d pi / d y`; the objective gradient is `-2 J^T r`.
    jtr: Vector6<f64>,
    jtj: Matrix6<f64>,
    /// `sum_i r_i d^2 pi_i / d y^2`; the objective Hessian is
    /// `2 (J^T J - curvature)`.
    curvature: Matrix6<f64>,
}

fn linearize(x: &[Vector2<f64>], z: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> Result<Linearization> {
    let points = project_pose_second_order(z, pose, k)?;
    let mut lin = Linearization {
        objective: precise_objective(x, z, pose, k)?,
        jtr: Vector6::zeros(),
        jtj: Matrix6::zeros(),
        curvature: Matrix6::zeros(),
    };
    for (xi, p) in x.iter().zip(&points) {
        for a in 0..2 {
            let r = xi[a] - p.value[a];
            lin.jtr += p.grad[a] * r;
            lin.jtj += p.grad[a] * p.grad[a].transpose();
            lin.curvature += p.hess[a] * r;
        }
    }
    Ok(lin)
}

fn stationarity(lin: &Linearization) -> f64 {
    2.0 * lin.jtr.amax()
}

/// `pose + delta`, with the translation part re-solved for the error made
/// rounding the rotation part to `f64`.
///
/// Near a minimum the rotation step can fall below the spacing of `f64`
/// values while the Hessian is of order 1e8 px^2, so plain rounding leaves
/// `|d o / d y|` near 1e-8. Rotation and translation are strongly coupled,
/// and the compensated point is the best the lattice offers along the
/// translation directions.
fn compensated_trial(pose: &Pose, delta: &Vector6<f64>, system: &Matrix6<f64>) -> Pose {
    let rot = pose.rot + delta.fixed_rows::<3>(0);
    let rot_error = (rot - pose.rot) - delta.fixed_rows::<3>(0);
    let a_tt = system.fixed_view::<3, 3>(3, 3).into_owned();
    let a_tr = system.fixed_view::<3, 3>(3, 0).into_owned();
    let correction = a_tt
        .cholesky()
        .map(|c| c.solve(&(a_tr * rot_error)))
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .unwrap_or_else(Vector3::zeros);
    Pose::new(rot, pose.trans + delta.fixed_rows::<3>(3) - correction)
}

/// Minimizes the reprojection objective over the pose starting from `init`.
///
/// Never fails on non-convergence; the returned solution carries the flag.
pub(crate) fn levenberg_marquardt(
    x: &[Vector2<f64>],
    z: &[Vector3<f64>],
    k: &Intrinsics,
    init: &Pose,
    cfg: &SolverConfig,
) -> Result<PnPSolution> {
    let mut pose = *init;
    let mut lin = linearize(x, z, &pose, k)?;
    let mut history = vec![lin.objective.to_f64()];
    let mut lambda = cfg.lambda_init;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        // Polish in canonical coordinates: re-expressing the rotation moves
        // the pose to a different f64 lattice point, which can undo a tight
        // stationarity. The switch is taken only if it does not raise the
        // objective, so accepted objectives stay non-increasing.
        let canonical = canonicalize_rotation(&pose.rot);
        if canonical != pose.rot {
            let candidate = Pose::new(canonical, pose.trans);
            if let Ok(c) = linearize(x, z, &candidate, k) {
                if c.objective <= lin.objective {
                    pose = candidate;
                    lin = c;
                }
            }
        }
        if stationarity(&lin) <= cfg.grad_tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;

        let max_diag = lin.jtj.diagonal().max();
        let damping = Matrix6::from_diagonal(
            &lin.jtj
                .diagonal()
                .map(|d| lambda * d.max(1e-12 * max_diag).max(f64::MIN_POSITIVE)),
        );
        // Newton step on the exact Hessian where its damped form is positive
        // definite; Gauss-Newton otherwise. Gauss-Newton alone converges only
        // linearly, and barely, when residuals are large.
        let newton = lin.jtj - lin.curvature + damping;
        let gauss_newton = lin.jtj + damping;
        let Some((system, chol)) = newton
            .cholesky()
            .map(|c| (newton, c))
            .or_else(|| gauss_newton.cholesky().map(|c| (gauss_newton, c)))
        else {
            lambda *= cfg.lambda_up;
            if lambda > LAMBDA_MAX {
                return Err(Error::NumericalFailure(
                    "normal equations singular beyond damping recovery".into(),
                ));
            }
            continue;
        };
        let delta = chol.solve(&lin.jtr);
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite LM step".into()));
        }
        let trial = compensated_trial(&pose, &delta, &system);

        // A step that pushes a point behind the camera is a failed step.
        let previous_objective = lin.objective;
        let accepted = match linearize(x, z, &trial, k) {
            Ok(trial_lin) if trial_lin.objective.is_finite() => {
                // Both damped models are positive definite and predict a decrease,
                // so gain >= 0 iff o does not grow.
                if trial_lin.objective <= lin.objective {
                    pose = trial;
                    lin = trial_lin;
                    history.push(lin.objective.to_f64());
                    true
                } else {
                    false
                }
            }
            Ok(_) | Err(Error::PointBehindCamera { .. }) => false,
            Err(e) => return Err(e),
        };

        if accepted {
            lambda = (lambda * cfg.lambda_down).max(LAMBDA_MIN);
            // At pixel scale a 1e-10 step can still leave |f| near 1e-5, so a
            // short step is a stall only when the objective did not move.
            if delta.norm() < cfg.step_tol && lin.objective >= previous_objective {
                converged = stationarity(&lin) <= cfg.grad_tol;
                break;
            }
        } else {
            lambda *= cfg.lambda_up;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }

    let canonical = canonicalize_rotation(&pose.rot);
    if canonical != pose.rot {
        pose.rot = canonical;
        lin = linearize(x, z, &pose, k)?;
        converged = stationarity(&lin) <= cfg.grad_tol;
    }

    Ok(PnPSolution {
        pose,
        objective: lin.objective.to_f64(),
        stationarity_norm: stationarity(&lin),
        iterations,
        converged,
        history,
    })
}

/// Least-squares PnP refinement from an initial pose.
///
/// Returns `DidNotConverge` carrying the best pose found when the
/// stationarity tolerance is not reached.
pub fn solve_pnp(corrs: &Correspondences, k: &Intrinsics, init: &Pose, cfg: &SolverConfig) -> Result<PnPSolution> {
    cfg.validate()?;
    k.validate()?;
    if corrs.len() < Correspondences::MIN_POINTS {
        return Err(Error::TooFewPoints {
            required: Correspondences::MIN_POINTS,
            actual: corrs.len(),
        });
    }
    if !init.is_finite() {
        return Err(Error::InvalidInput("initial pose is not finite".into()));
    }
    let sol = levenberg_marquardt(&corrs.image, &corrs.world, k, init, cfg)?;
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::DidNotConverge(Box::new(sol)))
    }
}
