use std::path::Path;
use std::time::Instant;

use bpnp::implicit::{fd_jacobian_oracle, normalized_errors, solution_jacobians, InputKind};
use bpnp::tasks::initial_pose;
use bpnp::tasks::synthetic::{generate_synthetic, SceneSpec};
use bpnp::{solve_pnp, Correspondences, Intrinsics, RansacConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{finish, Outcome};
use crate::config::GradcheckConfig;
use crate::error::CliResult;
use crate::io::{read_json, CorrespondencesFile, OutputDir};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputReport {
    pub input: InputKind,
    pub dim: usize,
    /// `max |implicit - fd| / max |fd|` over the Jacobian.
    pub max_relative_error: f64,
    pub median_relative_error: f64,
    pub fd_solver_calls: usize,
    pub fd_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub seed: u64,
    pub n: usize,
    pub noise: f64,
    pub objective: Option<f64>,
    /// Condition number of the stationary Hessian.
    pub condition: Option<f64>,
    pub implicit_seconds: Option<f64>,
    pub fd_seconds: f64,
    pub fd_solver_calls: usize,
    /// `2 * (2n + 3n + 4)`: two solves per perturbed input coordinate.
    pub expected_solver_calls: usize,
    pub inputs: Vec<InputReport>,
    pub max_relative_error: Option<f64>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub fd_step: f64,
    pub instances: Vec<InstanceReport>,
    pub max_relative_error: Option<f64>,
    pub passed: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Compares implicit and central-difference Jacobians of the solved pose
/// with respect to `x`, `z` and `K` on one instance. Failures are recorded
/// in the report rather than returned.
pub fn check_instance(
    corrs: &Correspondences,
    k: &Intrinsics,
    cfg: &GradcheckConfig,
    seed: u64,
    noise: f64,
) -> InstanceReport {
    let n = corrs.len();
    let mut report = InstanceReport {
        seed,
        n,
        noise,
        objective: None,
        condition: None,
        implicit_seconds: None,
        fd_seconds: 0.0,
        fd_solver_calls: 0,
        expected_solver_calls: InputKind::ALL.iter().map(|w| 2 * w.dim(n)).sum(),
        inputs: Vec::new(),
        max_relative_error: None,
        passed: false,
        error: None,
    };
    if let Err(e) = fill(&mut report, corrs, k, cfg, seed) {
        report.error = Some(e.to_string());
        return report;
    }
    report.passed = report.max_relative_error.is_some_and(|e| e <= cfg.tolerance);
    report
}

fn fill(
    report: &mut InstanceReport,
    corrs: &Correspondences,
    k: &Intrinsics,
    cfg: &GradcheckConfig,
    seed: u64,
) -> bpnp::Result<()> {
    let ransac = RansacConfig { seed, ..cfg.ransac };
    let start = initial_pose(corrs, k, &ransac)?;
    let sol = solve_pnp(corrs, k, &start, &cfg.solver)?;
    report.objective = Some(sol.objective);

    let clock = Instant::now();
    let implicit = solution_jacobians(corrs, k, &sol)?;
    report.implicit_seconds = Some(clock.elapsed().as_secs_f64());
    report.condition = Some(implicit.condition);

    let mut worst: f64 = 0.0;
    for which in InputKind::ALL {
        let fd = fd_jacobian_oracle(corrs, k, &sol, which, cfg.fd_step, &cfg.solver)?;
        let analytic = DMatrix::from_column_slice(6, fd.jacobian.ncols(), implicit.get(which).as_slice());
        let errors = normalized_errors(&analytic, &fd.jacobian);
        let max = errors.iter().copied().fold(0.0, f64::max);
        worst = worst.max(max);
        report.fd_seconds += fd.seconds;
        report.fd_solver_calls += fd.solver_calls;
        report.inputs.push(InputReport {
            input: which,
            dim: which.dim(corrs.len()),
            max_relative_error: max,
            median_relative_error: median(errors),
            fd_solver_calls: fd.solver_calls,
            fd_seconds: fd.seconds,
        });
    }
    report.max_relative_error = Some(worst);
    Ok(())
}

/// Generated instance `seed`: one frame of `n` points.
pub fn instance(cfg: &GradcheckConfig, n: usize, noise: f64, seed: u64) -> bpnp::Result<(Correspondences, Intrinsics)> {
    let spec = SceneSpec {
        n,
        noise_sigma: noise,
        intrinsics: cfg.intrinsics,
        distance_range: cfg.distance_range,
        seed,
        ..SceneSpec::default()
    };
    let scene = generate_synthetic(&spec)?;
    Ok((scene.correspondences(0)?, scene.intrinsics))
}

pub fn report(cfg: &GradcheckConfig, instances: Vec<InstanceReport>) -> GradcheckReport {
    let passed = instances.iter().all(|i| i.passed);
    let max = instances
        .iter()
        .map(|i| i.max_relative_error)
        .try_fold(0.0, |acc: f64, e| e.map(|e| acc.max(e)));
    GradcheckReport {
        tolerance: cfg.tolerance,
        fd_step: cfg.fd_step,
        instances,
        max_relative_error: max,
        passed,
    }
}

/// Checks the implicit Jacobians against central differences; exit 1 when
/// any instance fails or exceeds the tolerance.
pub fn run(cfg: &GradcheckConfig, out: &Path) -> CliResult<Outcome> {
    let manifest = RunManifest::start("gradcheck", cfg, cfg.seed);
    let mut dir = OutputDir::create(out)?;
    let instances: Vec<InstanceReport> = match &cfg.correspondences {
        Some(path) => {
            let file: CorrespondencesFile = read_json(path)?;
            let corrs = file.correspondences()?;
            let k = file.k.unwrap_or(cfg.intrinsics);
            k.validate()?;
            vec![check_instance(&corrs, &k, cfg, cfg.seed, cfg.noise)]
        }
        None => (0..cfg.instances as u64)
            .map(|i| {
                let seed = cfg.seed + i;
                let (corrs, k) = instance(cfg, cfg.n, cfg.noise, seed)?;
                Ok(check_instance(&corrs, &k, cfg, seed, cfg.noise))
            })
            .collect::<bpnp::Result<_>>()?,
    };
    let report = report(cfg, instances);
    finish(&mut dir, manifest, &report)?;

    let failures: Vec<String> = report
        .instances
        .iter()
        .filter(|i| !i.passed)
        .map(|i| match &i.error {
            Some(e) => format!("seed {}: {e}", i.seed),
            None => format!(
                "seed {}: max relative error {:.3e} exceeds {:.1e}",
                i.seed,
                i.max_relative_error.unwrap_or(f64::NAN),
                cfg.tolerance
            ),
        })
        .collect();
    let headline = format!(
        "gradcheck: {} instance(s), max relative error {}",
        report.instances.len(),
        report.max_relative_error.map_or("n/a".into(), |e| format!("{e:.3e}"))
    );
    Ok(if failures.is_empty() {
        Outcome::ok(headline)
    } else {
        Outcome::failed(format!("{headline}\n{}", failures.join("\n")))
    })
}
