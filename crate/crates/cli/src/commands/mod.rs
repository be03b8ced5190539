//! One module per subcommand. Each writes its trace, summary and manifest
//! under the output directory and reports an exit status.

pub mod calib;
pub mod gradcheck;
pub mod pose;
pub mod sfm;

use std::path::Path;

use bpnp::tasks::synthetic::{generate_from_points, generate_synthetic, Scene, SceneSpec};
use bpnp::tasks::StopReason;
use serde::Serialize;

use crate::error::{CliResult, EXIT_FAILURE, EXIT_OK};
use crate::io::{read_json, OutputDir, PointsFile};
use crate::manifest::{unix_now, RunManifest};

/// How a command ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub message: String,
}

impl Outcome {
    fn ok(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_OK,
            message: message.into(),
        }
    }

    fn failed(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_FAILURE,
            message: message.into(),
        }
    }

    /// Exit 1 when training aborted, 0 otherwise.
    fn from_stop(stop: &StopReason, done: String) -> Self {
        match stop {
            StopReason::Failed { epoch, message } => Self::failed(format!("failed at epoch {epoch}: {message}")),
            _ => Self::ok(done),
        }
    }
}

/// The generated scene, or one over the points in `points_file`.
fn load_scene(points_file: Option<&Path>, spec: &SceneSpec) -> CliResult<Scene> {
    Ok(match points_file {
        Some(path) => generate_from_points(read_json::<PointsFile>(path)?.to_points(), spec)?,
        None => generate_synthetic(spec)?,
    })
}

/// Writes `summary.json` and `manifest.json` and closes the run.
fn finish<S: Serialize>(dir: &mut OutputDir, mut manifest: RunManifest, summary: &S) -> CliResult<()> {
    dir.json("summary.json", summary)?;
    manifest.outputs = dir.written().to_vec();
    manifest.outputs.push(dir.path("manifest.json"));
    manifest.finished_at = unix_now();
    dir.json("manifest.json", &manifest)?;
    Ok(())
}
