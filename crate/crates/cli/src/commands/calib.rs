use std::path::Path;

use bpnp::rng::{stream_rng, Stream};
use bpnp::tasks::calib::{relative_errors, run_calibration, CalibEpoch, INTRINSICS_RANGE};
use bpnp::tasks::synthetic::{generate_synthetic, SceneSpec};
use bpnp::tasks::{SigmoidProvider, StopReason, Trace};
use bpnp::Intrinsics;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{finish, Outcome};
use crate::config::CalibConfig;
use crate::error::CliResult;
use crate::io::{read_json, CorrespondencesFile, OutputDir};
use crate::manifest::RunManifest;

/// One line of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibRow {
    pub epoch: usize,
    pub loss: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl From<&CalibEpoch> for CalibRow {
    fn from(e: &CalibEpoch) -> Self {
        let k = e.intrinsics;
        Self {
            epoch: e.epoch,
            loss: e.loss,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibSummary {
    pub converged: bool,
    pub stop: StopReason,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Intrinsics>,
    /// Per-parameter `|estimate - truth| / |truth|` in `fx, fy, cx, cy` order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_errors: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_relative_error: Option<f64>,
}

pub fn summarize(trace: &Trace<CalibEpoch>, truth: Option<&Intrinsics>) -> CalibSummary {
    let last = trace.records.last();
    let errors = last.zip(truth).map(|(l, t)| relative_errors(&l.intrinsics, t));
    CalibSummary {
        converged: trace.converged(),
        stop: trace.stop.clone(),
        epochs: trace.records.len(),
        final_loss: last.map(|l| l.loss),
        intrinsics: last.map(|l| l.intrinsics),
        truth: truth.copied(),
        relative_errors: errors,
        max_relative_error: errors.map(|e| e.into_iter().fold(0.0, f64::max)),
    }
}

/// Sigmoid-provider parameters drawn from a standard normal.
pub fn initial_theta(seed: u64) -> DVector<f64> {
    let mut rng = stream_rng(seed, Stream::Init);
    DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Recovers the intrinsics by backpropagating through the pose solve.
pub fn run(cfg: &CalibConfig, out: &Path) -> CliResult<Outcome> {
    let manifest = RunManifest::start("calib", cfg, cfg.seed);
    let mut dir = OutputDir::create(out)?;
    let (corrs, truth) = match &cfg.correspondences {
        Some(path) => {
            let file: CorrespondencesFile = read_json(path)?;
            (file.correspondences()?, file.k)
        }
        None => {
            let spec = SceneSpec {
                n: cfg.n,
                noise_sigma: cfg.noise,
                intrinsics: cfg.truth,
                distance_range: cfg.distance_range,
                seed: cfg.seed,
                ..SceneSpec::default()
            };
            (generate_synthetic(&spec)?.correspondences(0)?, Some(cfg.truth))
        }
    };
    let mut provider = SigmoidProvider::new(initial_theta(cfg.seed), INTRINSICS_RANGE);
    let trace = run_calibration(&mut provider, &corrs, truth.as_ref(), &cfg.train)?;

    let rows: Vec<CalibRow> = trace.records.iter().map(CalibRow::from).collect();
    dir.csv("trace.csv", &rows)?;
    let summary = summarize(&trace, truth.as_ref());
    finish(&mut dir, manifest, &summary)?;
    let done = format!(
        "calib: {} epochs, loss {:.3e}, max relative error {}",
        summary.epochs,
        summary.final_loss.unwrap_or(f64::NAN),
        summary.max_relative_error.map_or("n/a".into(), |e| format!("{e:.3e}"))
    );
    Ok(Outcome::from_stop(&trace.stop, done))
}
