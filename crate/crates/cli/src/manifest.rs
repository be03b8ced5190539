use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything needed to repeat a run: passing the manifest back as
/// `--config` reproduces its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        Self {
            command: command.into(),
            config: serde_json::to_value(config).expect("configs serialize"),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_at: unix_now(),
            finished_at: f64::NAN,
            outputs: Vec::new(),
        }
    }
}
