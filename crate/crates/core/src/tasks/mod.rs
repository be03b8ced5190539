//! End-to-end learning loops that backpropagate a task loss through the PnP
//! solver into the parameters of a provider `h(theta)`.
//!
//! Every loop has the same shape: evaluate the provider, re-solve PnP
//! warm-started from the previous epoch's pose, evaluate the loss and its
//! partials, pull the pose partial back through the implicit Jacobians, and
//! take one optimizer step on `theta`.

pub mod align;
pub mod calib;
pub mod pose;
pub mod provider;
pub mod sfm;
pub mod synthetic;

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{all_in_front, Correspondences, Intrinsics, Pose};
use crate::pnp::{ransac_init, solve_pnp, PnPSolution, RansacConfig, SolverConfig};

pub use provider::{DirectProvider, MlpProvider, MlpSpec, ParamProvider, SigmoidProvider};

/// Update rule applied to `theta` once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// `theta -= alpha * grad`.
    #[default]
    Sgd,
    /// Heavy-ball momentum.
    Momentum {
        beta: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Optimizer::Sgd => true,
            Optimizer::Momentum { beta } => (0.0..1.0).contains(&beta),
            Optimizer::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid optimizer {self:?}")))
        }
    }
}

/// Per-parameter optimizer memory.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    rule: Optimizer,
    step_size: f64,
    first: DVector<f64>,
    second: DVector<f64>,
    steps: i32,
}

impl OptimizerState {
    pub fn new(rule: Optimizer, step_size: f64, dim: usize) -> Self {
        Self {
            rule,
            step_size,
            first: DVector::zeros(dim),
            second: DVector::zeros(dim),
            steps: 0,
        }
    }

    pub fn step(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>) {
        self.steps += 1;
        match self.rule {
            Optimizer::Sgd => theta.axpy(-self.step_size, grad, 1.0),
            Optimizer::Momentum { beta } => {
                self.first = &self.first * beta + grad;
                theta.axpy(-self.step_size, &self.first, 1.0);
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.first = &self.first * beta1 + grad * (1.0 - beta1);
                self.second = &self.second * beta2 + grad.component_mul(grad) * (1.0 - beta2);
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for i in 0..theta.len() {
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    theta[i] -= self.step_size * m / (v.sqrt() + eps);
                }
            }
        }
    }
}

/// Settings shared by the three training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Optimizer step size `alpha`.
    pub step_size: f64,
    /// Weight of the keypoint regularizer (pose estimation only).
    pub lambda_reg: f64,
    pub max_epochs: usize,
    /// Training stops once the loss is at or below this value.
    pub loss_tol: f64,
    /// Training stops once the relative loss change over `plateau_window`
    /// epochs falls below this value.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub solver: SolverConfig,
    pub ransac: RansacConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            lambda_reg: 1.0,
            max_epochs: 2000,
            loss_tol: 1e-12,
            plateau_tol: 1e-9,
            plateau_window: 10,
            seed: 0,
            optimizer: Optimizer::Sgd,
            solver: SolverConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidInput(format!(
                "step size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be >= 0, got {}",
                self.lambda_reg
            )));
        }
        if self.max_epochs == 0 || self.plateau_window == 0 || !(self.loss_tol >= 0.0) || !(self.plateau_tol >= 0.0) {
            return Err(Error::InvalidInput("invalid stopping criteria".into()));
        }
        self.optimizer.validate()?;
        self.solver.validate()?;
        self.ransac.validate()
    }
}

/// Why a training loop stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    LossTolerance,
    Plateau,
    MaxEpochs,
    /// The solver or backward pass failed at `epoch`; the trace holds every
    /// earlier epoch.
    Failed {
        epoch: usize,
        message: String,
    },
}

/// Per-epoch records plus how the run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace<R> {
    pub records: Vec<R>,
    pub stop: StopReason,
}

impl<R> Trace<R> {
    /// True when training ended on one of its convergence criteria.
    pub fn converged(&self) -> bool {
        matches!(self.stop, StopReason::LossTolerance | StopReason::Plateau)
    }

    pub fn failed(&self) -> bool {
        matches!(self.stop, StopReason::Failed { .. })
    }
}

/// Tracks the loss history and decides when to stop.
#[derive(Debug, Clone)]
pub(crate) struct Convergence {
    loss_tol: f64,
    plateau_tol: f64,
    window: usize,
    max_epochs: usize,
    losses: Vec<f64>,
}

impl Convergence {
    pub(crate) fn new(cfg: &TrainConfig) -> Self {
        Self {
            loss_tol: cfg.loss_tol,
            plateau_tol: cfg.plateau_tol,
            window: cfg.plateau_window,
            max_epochs: cfg.max_epochs,
            losses: Vec::new(),
        }
    }

    /// Records the loss of the epoch just evaluated.
    pub(crate) fn observe(&mut self, loss: f64) -> Option<StopReason> {
        self.losses.push(loss);
        if loss <= self.loss_tol {
            return Some(StopReason::LossTolerance);
        }
        let n = self.losses.len();
        if n > self.window {
            let old = self.losses[n - 1 - self.window];
            if (old - loss).abs() <= self.plateau_tol * old.abs() {
                return Some(StopReason::Plateau);
            }
        }
        (n >= self.max_epochs).then_some(StopReason::MaxEpochs)
    }
}

/// A starting pose when there is no usable warm start: RANSAC, or failing
/// that a rotation-free pose that places the centroid of `world` on the
/// image centroid of `image` at a depth matching the observed spread.
pub fn initial_pose(corrs: &Correspondences, k: &Intrinsics, ransac: &RansacConfig) -> Result<Pose> {
    match ransac_init(corrs, k, ransac) {
        Ok(p) => Ok(p),
        Err(Error::NoHypothesisFound | Error::Degenerate(_) | Error::TooFewPoints { .. }) => {
            Ok(weak_perspective_pose(&corrs.image, &corrs.world, k))
        }
        Err(e) => Err(e),
    }
}

fn weak_perspective_pose(image: &[Vector2<f64>], world: &[Vector3<f64>], k: &Intrinsics) -> Pose {
    let n = world.len() as f64;
    let zc = world.iter().sum::<Vector3<f64>>() / n;
    let xc = image.iter().sum::<Vector2<f64>>() / n;
    let spread3 = (world.iter().map(|z| (z - zc).norm_squared()).sum::<f64>() / n).sqrt();
    let spread2 = (image.iter().map(|x| (x - xc).norm_squared()).sum::<f64>() / n).sqrt();
    let radius = world.iter().map(|z| (z - zc).norm()).fold(0.0, f64::max);
    let f = 0.5 * (k.fx + k.fy);
    let mut depth = if spread2 > 0.0 { f * spread3 / spread2 } else { 0.0 };
    depth = depth.max(2.0 * radius).max(1.0);
    let centre = Vector3::new(depth * (xc.x - k.cx) / k.fx, depth * (xc.y - k.cy) / k.fy, depth);
    Pose::new(Vector3::zeros(), centre - zc)
}

/// One forward solve, warm-started from `previous` when it places every
/// point in front of the camera.
pub(crate) fn warm_solve(
    corrs: &Correspondences,
    k: &Intrinsics,
    previous: &Pose,
    solver: &SolverConfig,
    ransac: &RansacConfig,
) -> Result<PnPSolution> {
    let start = if all_in_front(&corrs.world, previous) {
        *previous
    } else {
        initial_pose(corrs, k, ransac)?
    };
    solve_pnp(corrs, k, &start, solver)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_and_momentum_steps() {
        let grad = DVector::from_vec(vec![1.0, -2.0]);
        let mut theta = DVector::zeros(2);
        let mut sgd = OptimizerState::new(Optimizer::Sgd, 0.5, 2);
        sgd.step(&mut theta, &grad);
        assert_eq!(theta, DVector::from_vec(vec![-0.5, 1.0]));

        let mut theta = DVector::zeros(2);
        let mut mom = OptimizerState::new(Optimizer::Momentum { beta: 0.5 }, 1.0, 2);
        mom.step(&mut theta, &grad);
        mom.step(&mut theta, &grad);
        // velocities 1 then 1.5
        assert_eq!(theta, DVector::from_vec(vec![-2.5, 5.0]));
    }

    #[test]
    fn adam_first_step_has_unit_magnitude() {
        let grad = DVector::from_vec(vec![1e-3, -50.0]);
        let mut theta = DVector::zeros(2);
        let rule = Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
        };
        OptimizerState::new(rule, 0.1, 2).step(&mut theta, &grad);
        assert!((theta[0] + 0.1).abs() < 1e-9 && (theta[1] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn convergence_stops_on_each_criterion() {
        let cfg = TrainConfig {
            max_epochs: 5,
            plateau_window: 2,
            loss_tol: 1e-6,
            ..TrainConfig::default()
        };
        let mut c = Convergence::new(&cfg);
        assert_eq!(c.observe(1.0), None);
        assert_eq!(c.observe(0.5), None);
        assert_eq!(c.observe(1.0), Some(StopReason::Plateau));

        let mut c = Convergence::new(&cfg);
        assert_eq!(c.observe(1e-7), Some(StopReason::LossTolerance));

        let mut c = Convergence::new(&cfg);
        let stops: Vec<_> = [5.0, 4.0, 3.0, 2.0, 1.0].iter().map(|&l| c.observe(l)).collect();
        assert_eq!(stops[4], Some(StopReason::MaxEpochs));
        assert!(stops[..4].iter().all(Option::is_none));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lambda_reg: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            step_size: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn weak_perspective_pose_is_in_front_and_centred() {
        let world = vec![
            Vector3::new(3.0, 1.0, -5.0),
            Vector3::new(2.0, 0.0, -6.0),
            Vector3::new(4.0, 2.0, -4.0),
        ];
        let image = vec![
            Vector2::new(390.0, 290.0),
            Vector2::new(410.0, 310.0),
            Vector2::new(400.0, 300.0),
        ];
        let k = Intrinsics::new(800.0, 700.0, 400.0, 300.0).unwrap();
        let pose = weak_perspective_pose(&image, &world, &k);
        assert!(all_in_front(&world, &pose));
    }
}
