//! Command-line surface. Every flag overrides the matching config field.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bpnp", version, about = "Differentiable PnP experiments and gradient checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn keypoints whose PnP solution matches a target pose.
    Pose(PoseArgs),
    /// Learn a 3D structure from multiple calibrated views.
    Sfm(SfmArgs),
    /// Learn camera intrinsics through the pose solve.
    Calib(CalibArgs),
    /// Compare implicit Jacobians with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config (partial configs and run manifests are accepted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "bpnp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Keypoint regularizer weight.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Optimizer step size.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of keypoints.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SfmArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Fraction of points each frame observes.
    #[arg(long, allow_negative_numbers = true)]
    pub visibility: Option<f64>,
    /// Gaussian pixel noise.
    #[arg(long, allow_negative_numbers = true)]
    pub noise: Option<f64>,
    /// Structure snapshot every this many epochs (0 disables them).
    #[arg(long)]
    pub snapshot_stride: Option<usize>,
    /// Points JSON replacing the generated cloud.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub noise: Option<f64>,
    /// Correspondences JSON replacing the generated observations.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub noise: Option<f64>,
    /// Largest acceptable max relative error.
    #[arg(long, allow_negative_numbers = true)]
    pub tolerance: Option<f64>,
    /// Number of consecutive seeds to check.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Correspondences JSON checked instead of generated instances.
    #[arg(long)]
    pub correspondences: Option<PathBuf>,
}
