//! The `bpnp` command-line tool: experiment drivers for pose estimation,
//! structure from motion and camera calibration through a differentiable
//! PnP solver, and a gradient checker for its implicit Jacobians.
//!
//! Exit codes: 0 success, 1 numerical or acceptance failure, 2 usage,
//! configuration or input-file error.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use args::{Cli, Command};
use config::{resolve, CalibConfig, GradcheckConfig, PoseConfig, SfmConfig};
use error::{CliError, CliResult, EXIT_USAGE};

pub use commands::Outcome;

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Resolves the config for `cli` and runs the command.
pub fn execute(cli: Cli) -> CliResult<Outcome> {
    match cli.command {
        Command::Pose(a) => {
            let cfg = resolve(a.common.config.as_deref(), |c: &mut PoseConfig| {
                set(&mut c.seed, a.common.seed);
                set(&mut c.train.lambda_reg, a.lambda);
                set(&mut c.train.step_size, a.alpha);
                set(&mut c.train.max_epochs, a.epochs);
                set(&mut c.n, a.n);
            })?;
            commands::pose::run(&cfg, &a.common.out)
        }
        Command::Sfm(a) => {
            let cfg = resolve(a.common.config.as_deref(), |c: &mut SfmConfig| {
                set(&mut c.seed, a.common.seed);
                set(&mut c.train.step_size, a.alpha);
                set(&mut c.train.max_epochs, a.epochs);
                set(&mut c.n, a.n);
                set(&mut c.frames, a.frames);
                set(&mut c.visibility, a.visibility);
                set(&mut c.noise, a.noise);
                set(&mut c.snapshot_stride, a.snapshot_stride);
                if a.scene.is_some() {
                    c.scene = a.scene;
                }
            })?;
            commands::sfm::run(&cfg, &a.common.out)
        }
        Command::Calib(a) => {
            let cfg = resolve(a.common.config.as_deref(), |c: &mut CalibConfig| {
                set(&mut c.seed, a.common.seed);
                set(&mut c.train.step_size, a.alpha);
                set(&mut c.train.max_epochs, a.epochs);
                set(&mut c.n, a.n);
                set(&mut c.noise, a.noise);
                if a.correspondences.is_some() {
                    c.correspondences = a.correspondences;
                }
            })?;
            commands::calib::run(&cfg, &a.common.out)
        }
        Command::Gradcheck(a) => {
            let cfg = resolve(a.common.config.as_deref(), |c: &mut GradcheckConfig| {
                set(&mut c.seed, a.common.seed);
                set(&mut c.n, a.n);
                set(&mut c.noise, a.noise);
                set(&mut c.tolerance, a.tolerance);
                set(&mut c.instances, a.instances);
                if a.correspondences.is_some() {
                    c.correspondences = a.correspondences;
                }
            })?;
            commands::gradcheck::run(&cfg, &a.common.out)
        }
    }
}

/// Caps internal parallelism at `BPNP_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("BPNP_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("BPNP_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {threads} threads: {e}")))
}

/// Runs `cli`, prints the outcome and returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = configure_threads().and_then(|()| execute(cli));
    match result {
        Ok(outcome) => {
            if outcome.exit_code == 0 {
                println!("{}", outcome.message);
            } else {
                eprintln!("error: {}", outcome.message);
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert!(code != 0);
            if code == EXIT_USAGE {
                eprintln!("run `bpnp --help` for usage");
            }
            code
        }
    }
}
