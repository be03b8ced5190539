//! File formats: scene points and correspondences (JSON input), traces
//! (CSV with a header row) and summaries, snapshots and manifests (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use bpnp::{Correspondences, Intrinsics};
use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// `{"points": [[x, y, z], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsFile {
    pub points: Vec<[f64; 3]>,
}

impl PointsFile {
    pub fn from_points(points: &[Vector3<f64>]) -> Self {
        Self {
            points: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn to_points(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| Vector3::from(*p)).collect()
    }
}

/// `{"x2d": [[u, v], ...], "z3d": [[x, y, z], ...], "K": {...}}`; `K` is
/// optional and, when present, is the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondencesFile {
    pub x2d: Vec<[f64; 2]>,
    pub z3d: Vec<[f64; 3]>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Intrinsics>,
}

impl CorrespondencesFile {
    pub fn from_parts(corrs: &Correspondences, k: Option<Intrinsics>) -> Self {
        Self {
            x2d: corrs.image.iter().map(|x| [x.x, x.y]).collect(),
            z3d: corrs.world.iter().map(|z| [z.x, z.y, z.z]).collect(),
            k,
        }
    }

    pub fn correspondences(&self) -> bpnp::Result<Correspondences> {
        Correspondences::new(
            self.x2d.iter().map(|x| Vector2::from(*x)).collect(),
            self.z3d.iter().map(|z| Vector3::from(*z)).collect(),
        )
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    })
}

fn output_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Output {
        path: path.into(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| output_error(path, e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| output_error(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| output_error(path, e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| output_error(path, e.into()))?;
    }
    w.flush().map_err(|e| output_error(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let input_error = |message: String| CliError::Input {
        path: path.into(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| input_error(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| input_error(e.to_string())))
        .collect()
}

/// Output files of one run, rooted at `dir`.
#[derive(Debug, Clone)]
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
        Ok(Self {
            dir: dir.into(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| output_error(parent, e))?;
        }
        write_json(&path, value)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        let path = self.path(name);
        write_csv(&path, rows)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Every file written so far, in write order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
