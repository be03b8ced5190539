//! Per-command configuration, resolved as defaults < config file < flags.
//!
//! A config file may hold a full or partial config object, or a run manifest
//! (whose `config` is then used), so any run can be repeated from its
//! manifest. Nested objects merge key by key; an object whose `kind` differs
//! from the default replaces it whole.

use std::path::{Path, PathBuf};

use bpnp::tasks::{MlpSpec, Optimizer, TrainConfig};
use bpnp::{Intrinsics, RansacConfig, SolverConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io::read_json;

pub const DEFAULT_INTRINSICS: Intrinsics = Intrinsics {
    fx: 800.0,
    fy: 700.0,
    cx: 400.0,
    cy: 300.0,
};

const DEFAULT_DISTANCE: [f64; 2] = [2.5, 4.0];

pub fn adam() -> Optimizer {
    Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    }
}

pub trait CommandConfig: Serialize + DeserializeOwned + Default {
    const COMMAND: &'static str;
    fn validate(&self) -> CliResult<()>;
    /// Propagates the run seed into nested configs.
    fn sync_seed(&mut self) {}
}

fn seed_train(train: &mut TrainConfig, seed: u64) {
    train.seed = seed;
    train.ransac.seed = seed;
}

/// The learnable block in front of the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    /// The parameters are the output.
    #[default]
    Direct,
    /// A constant-input `tanh` network whose output is the direct
    /// initialization plus `output_scale` times its last layer.
    Mlp {
        input: usize,
        hidden: Vec<usize>,
        output_scale: f64,
    },
}

impl ProviderConfig {
    pub fn mlp_spec(&self, offset: &[f64]) -> Option<MlpSpec> {
        match self {
            ProviderConfig::Direct => None,
            ProviderConfig::Mlp {
                input,
                hidden,
                output_scale,
            } => {
                let mut widths = vec![*input];
                widths.extend(hidden);
                widths.push(offset.len());
                Some(MlpSpec {
                    widths,
                    output_scale: *output_scale,
                    output_offset: offset.to_vec(),
                })
            }
        }
    }

    fn validate(&self) -> CliResult<()> {
        match self {
            ProviderConfig::Direct => Ok(()),
            ProviderConfig::Mlp {
                input,
                hidden,
                output_scale,
            } => {
                if *input == 0 || hidden.contains(&0) || !(output_scale.is_finite() && *output_scale > 0.0) {
                    return Err(CliError::Usage(format!("invalid MLP provider {self:?}")));
                }
                Ok(())
            }
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(msg()))
    }
}

fn check_common(train: &TrainConfig, distance_range: [f64; 2], noise: f64) -> CliResult<()> {
    train.validate()?;
    check(
        distance_range[0] > 0.0 && distance_range[1] >= distance_range[0] && distance_range[1].is_finite(),
        || format!("invalid distance range {distance_range:?}"),
    )?;
    check(noise >= 0.0 && noise.is_finite(), || {
        format!("noise must be finite and >= 0, got {noise}")
    })
}

/// Pose estimation from learned keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    pub seed: u64,
    /// Number of keypoints (ignored when `scene` is given).
    pub n: usize,
    /// Optional points JSON replacing the generated cloud.
    pub scene: Option<PathBuf>,
    pub intrinsics: Intrinsics,
    pub distance_range: [f64; 2],
    /// Keypoints start at their targets plus uniform noise in `[-a, a]` px.
    pub init_noise: f64,
    /// Keypoint RMS (px) above which the summary reports drift.
    pub drift_threshold: f64,
    /// Reprojection RMS (px) against the target below which the pose counts
    /// as recovered.
    pub pose_tolerance: f64,
    pub provider: ProviderConfig,
    pub train: TrainConfig,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 8,
            scene: None,
            intrinsics: DEFAULT_INTRINSICS,
            distance_range: DEFAULT_DISTANCE,
            init_noise: 30.0,
            drift_threshold: 5.0,
            pose_tolerance: 0.5,
            provider: ProviderConfig::Direct,
            train: TrainConfig {
                step_size: 0.1,
                lambda_reg: 1.0,
                max_epochs: 2000,
                ..TrainConfig::default()
            },
        }
    }
}

impl CommandConfig for PoseConfig {
    const COMMAND: &'static str = "pose";

    fn sync_seed(&mut self) {
        seed_train(&mut self.train, self.seed);
    }

    fn validate(&self) -> CliResult<()> {
        check_common(&self.train, self.distance_range, 0.0)?;
        self.intrinsics.validate()?;
        self.provider.validate()?;
        check(self.n >= 4, || {
            format!("at least 4 points are required, got {}", self.n)
        })?;
        check(self.init_noise >= 0.0 && self.init_noise.is_finite(), || {
            format!("init noise must be finite and >= 0, got {}", self.init_noise)
        })?;
        check(self.drift_threshold >= 0.0 && self.pose_tolerance >= 0.0, || {
            "drift threshold and pose tolerance must be >= 0".into()
        })
    }
}

/// Structure from motion with calibrated cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmConfig {
    pub seed: u64,
    /// Number of points (ignored when `scene` is given).
    pub n: usize,
    pub frames: usize,
    /// Fraction of points each frame observes.
    pub visibility: f64,
    /// Gaussian pixel noise on the observations.
    pub noise: f64,
    /// Optional points JSON replacing the generated cloud.
    pub scene: Option<PathBuf>,
    pub intrinsics: Intrinsics,
    pub distance_range: [f64; 2],
    /// Standard deviation of the Gaussian cloud the structure starts from.
    pub init_sigma: f64,
    /// Keep a structure snapshot every this many epochs (0 disables them).
    pub snapshot_stride: usize,
    pub provider: ProviderConfig,
    pub train: TrainConfig,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n: 100,
            frames: 12,
            visibility: 0.5,
            noise: 0.0,
            scene: None,
            intrinsics: DEFAULT_INTRINSICS,
            distance_range: DEFAULT_DISTANCE,
            init_sigma: 0.5,
            snapshot_stride: 100,
            provider: ProviderConfig::Direct,
            train: TrainConfig {
                step_size: 1e-2,
                optimizer: adam(),
                max_epochs: 5000,
                solver: SolverConfig {
                    max_iters: 1000,
                    ..SolverConfig::default()
                },
                ..TrainConfig::default()
            },
        }
    }
}

impl CommandConfig for SfmConfig {
    const COMMAND: &'static str = "sfm";

    fn sync_seed(&mut self) {
        seed_train(&mut self.train, self.seed);
    }

    fn validate(&self) -> CliResult<()> {
        check_common(&self.train, self.distance_range, self.noise)?;
        self.intrinsics.validate()?;
        self.provider.validate()?;
        check(self.n >= 4, || {
            format!("at least 4 points are required, got {}", self.n)
        })?;
        check(self.frames >= 2, || {
            format!("at least 2 frames are required, got {}", self.frames)
        })?;
        check(self.visibility > 0.0 && self.visibility <= 1.0, || {
            format!("visibility must lie in (0, 1], got {}", self.visibility)
        })?;
        check(self.init_sigma > 0.0 && self.init_sigma.is_finite(), || {
            format!("init sigma must be > 0, got {}", self.init_sigma)
        })
    }
}

/// Intrinsics calibration through a sigmoid-bounded provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub seed: u64,
    /// Number of generated points (ignored when `correspondences` is given).
    pub n: usize,
    pub noise: f64,
    /// Intrinsics that generate the observations.
    pub truth: Intrinsics,
    /// Optional correspondences JSON; its `K`, when present, is the truth.
    pub correspondences: Option<PathBuf>,
    pub distance_range: [f64; 2],
    pub train: TrainConfig,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 8,
            noise: 0.0,
            truth: DEFAULT_INTRINSICS,
            correspondences: None,
            distance_range: DEFAULT_DISTANCE,
            train: TrainConfig {
                step_size: 1e-2,
                optimizer: adam(),
                max_epochs: 20000,
                ..TrainConfig::default()
            },
        }
    }
}

impl CommandConfig for CalibConfig {
    const COMMAND: &'static str = "calib";

    fn sync_seed(&mut self) {
        seed_train(&mut self.train, self.seed);
    }

    fn validate(&self) -> CliResult<()> {
        check_common(&self.train, self.distance_range, self.noise)?;
        self.truth.validate()?;
        check(self.n >= 4, || {
            format!("at least 4 points are required, got {}", self.n)
        })
    }
}

/// Implicit-versus-finite-difference Jacobian comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Seed of the first instance; instance `i` uses `seed + i`.
    pub seed: u64,
    pub instances: usize,
    pub n: usize,
    pub noise: f64,
    pub intrinsics: Intrinsics,
    pub distance_range: [f64; 2],
    /// Optional correspondences JSON checked instead of generated instances.
    pub correspondences: Option<PathBuf>,
    /// Central-difference step.
    pub fd_step: f64,
    /// Largest acceptable max relative error.
    pub tolerance: f64,
    pub solver: SolverConfig,
    pub ransac: RansacConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            instances: 1,
            n: 8,
            noise: 0.0,
            intrinsics: DEFAULT_INTRINSICS,
            distance_range: DEFAULT_DISTANCE,
            correspondences: None,
            fd_step: 1e-5,
            tolerance: 1e-3,
            solver: SolverConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

impl CommandConfig for GradcheckConfig {
    const COMMAND: &'static str = "gradcheck";

    fn validate(&self) -> CliResult<()> {
        check_common(&TrainConfig::default(), self.distance_range, self.noise)?;
        self.intrinsics.validate()?;
        self.solver.validate()?;
        self.ransac.validate()?;
        check(self.n >= 4, || {
            format!("at least 4 points are required, got {}", self.n)
        })?;
        check(self.instances >= 1, || "at least one instance is required".into())?;
        check(self.fd_step > 0.0 && self.fd_step.is_finite(), || {
            format!("finite-difference step must be > 0, got {}", self.fd_step)
        })?;
        check(self.tolerance > 0.0, || {
            format!("tolerance must be > 0, got {}", self.tolerance)
        })
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            if o.get("kind").is_some_and(|k| Some(k) != b.get("kind")) {
                *b = o;
                return;
            }
            for (key, value) in o {
                merge(b.entry(key).or_insert(Value::Null), value);
            }
        }
        (b, o) => *b = o,
    }
}

/// `C`'s defaults overlaid with `file` (a config or a manifest), then
/// `flags`, then validated.
pub fn resolve<C: CommandConfig>(file: Option<&Path>, flags: impl FnOnce(&mut C)) -> CliResult<C> {
    let mut value = serde_json::to_value(C::default()).expect("default config serializes");
    if let Some(path) = file {
        let mut over: Value = read_json(path)?;
        if let (Some(command), Some(config)) = (over.get("command"), over.get("config")) {
            if command != C::COMMAND {
                return Err(CliError::Usage(format!(
                    "{} is a manifest of a `{}` run, not `{}`",
                    path.display(),
                    command.as_str().unwrap_or("?"),
                    C::COMMAND
                )));
            }
            over = config.clone();
        }
        if !over.is_object() {
            return Err(CliError::Input {
                path: path.into(),
                message: "expected a JSON object".into(),
            });
        }
        merge(&mut value, over);
    }
    let mut cfg: C = serde_json::from_value(value).map_err(|e| match file {
        Some(path) => CliError::Input {
            path: path.into(),
            message: e.to_string(),
        },
        None => CliError::Usage(e.to_string()),
    })?;
    flags(&mut cfg);
    cfg.sync_seed();
    cfg.validate()?;
    Ok(cfg)
}
