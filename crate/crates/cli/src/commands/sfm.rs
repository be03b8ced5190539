use std::path::Path;

use bpnp::rng::{stream_rng, Stream};
use bpnp::tasks::align::aligned_rmse;
use bpnp::tasks::sfm::{run_sfm, SfmRun};
use bpnp::tasks::synthetic::SceneSpec;
use bpnp::tasks::{DirectProvider, MlpProvider, StopReason};
use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{finish, load_scene, Outcome};
use crate::config::SfmConfig;
use crate::error::CliResult;
use crate::io::{OutputDir, PointsFile};
use crate::manifest::RunManifest;

/// One line of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmRow {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmSummary {
    pub converged: bool,
    pub stop: StopReason,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub num_points: usize,
    pub frames: usize,
    /// Points seen by fewer than two frames; excluded from the RMSE.
    pub under_observed: Vec<usize>,
    /// Largest pairwise distance between ground-truth points.
    pub diameter: f64,
    /// RMSE to the ground truth after similarity alignment.
    pub aligned_rmse: Option<f64>,
    pub aligned_rmse_over_diameter: Option<f64>,
    pub snapshots: Vec<String>,
}

/// Snapshot file name for `epoch`.
pub fn snapshot_name(epoch: usize) -> String {
    format!("snapshots/epoch_{epoch:06}.json")
}

/// A Gaussian cloud of `n` points with standard deviation `sigma`.
pub fn initial_structure(n: usize, sigma: f64, seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Init);
    DVector::from_fn(3 * n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

pub fn summarize(run: &SfmRun, truth: &[Vector3<f64>], diameter: f64, frames: usize) -> SfmSummary {
    let keep: Vec<usize> = (0..truth.len()).filter(|i| !run.under_observed.contains(i)).collect();
    let evaluated = !run.trace.records.is_empty();
    let rmse = evaluated
        .then(|| aligned_rmse(&run.structure, truth, Some(&keep)).ok())
        .flatten();
    SfmSummary {
        converged: run.trace.converged(),
        stop: run.trace.stop.clone(),
        epochs: run.trace.records.len(),
        final_loss: run.trace.records.last().map(|r| r.loss),
        num_points: truth.len(),
        frames,
        under_observed: run.under_observed.clone(),
        diameter,
        aligned_rmse: rmse,
        aligned_rmse_over_diameter: rmse.map(|r| r / diameter),
        snapshots: Vec::new(),
    }
}

/// Learns a structure that every frame's PnP solution explains.
pub fn run(cfg: &SfmConfig, out: &Path) -> CliResult<Outcome> {
    let manifest = RunManifest::start("sfm", cfg, cfg.seed);
    let mut dir = OutputDir::create(out)?;
    let spec = SceneSpec {
        n: cfg.n,
        frames: cfg.frames,
        noise_sigma: cfg.noise,
        visibility: cfg.visibility,
        distance_range: cfg.distance_range,
        intrinsics: cfg.intrinsics,
        seed: cfg.seed,
        ..SceneSpec::default()
    };
    let scene = load_scene(cfg.scene.as_deref(), &spec)?;
    let problem = scene.problem();
    let z0 = initial_structure(scene.points.len(), cfg.init_sigma, cfg.seed);
    let run = match cfg.provider.mlp_spec(z0.as_slice()) {
        None => run_sfm(&mut DirectProvider::new(z0), &problem, &cfg.train, cfg.snapshot_stride)?,
        Some(spec) => {
            let mut provider = MlpProvider::random(spec, &mut stream_rng(cfg.seed, Stream::Init))?;
            run_sfm(&mut provider, &problem, &cfg.train, cfg.snapshot_stride)?
        }
    };

    let rows: Vec<SfmRow> = run
        .trace
        .records
        .iter()
        .map(|r| SfmRow {
            epoch: r.epoch,
            loss: r.loss,
        })
        .collect();
    dir.csv("trace.csv", &rows)?;
    let mut summary = summarize(&run, &scene.points, scene.diameter, cfg.frames);
    for record in &run.trace.records {
        if let Some(structure) = &record.structure {
            let name = snapshot_name(record.epoch);
            dir.json(&name, &PointsFile::from_points(structure))?;
            summary.snapshots.push(name);
        }
    }
    dir.json("structure.json", &PointsFile::from_points(&run.structure))?;
    finish(&mut dir, manifest, &summary)?;
    let done = format!(
        "sfm: {} epochs, loss {:.3e}, aligned RMSE {:.3e} of the diameter",
        summary.epochs,
        summary.final_loss.unwrap_or(f64::NAN),
        summary.aligned_rmse_over_diameter.unwrap_or(f64::NAN)
    );
    Ok(Outcome::from_stop(&run.trace.stop, done))
}
