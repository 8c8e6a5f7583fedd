//! Command-line syntax.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lidarsim::dataset::Modality;
use lidarsim::fixture::FixtureKind;
use lidarsim::metrics::TableFormat;

#[derive(Debug, Parser)]
#[command(name = "lidarsim", version, about = "Learned LiDAR visibility simulation pipeline")]
pub struct Cli {
    /// JSON pipeline config; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core). Outputs are reproducible at 1.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic synthetic dataset.
    SynthFixture(SynthFixtureArgs),
    /// Rasterize and blur every frame's scans into visibility maps.
    GenLidarImages(GenLidarImagesArgs),
    /// Train the image-to-visibility network.
    Train(TrainArgs),
    /// Predict visibility maps with a trained checkpoint.
    Infer(InferArgs),
    /// Turn a visibility map into a point cloud.
    Reconstruct(ReconstructArgs),
    /// Compare predicted and ground-truth visibility maps.
    Evaluate(EvaluateArgs),
    /// Time network inference.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthFixtureArgs {
    /// Fixture layout.
    #[arg(long, value_parser = parse_kind)]
    pub kind: FixtureKind,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the layout and image noise. [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square image side in pixels.
    #[arg(long, default_value_t = lidarsim::fixture::DEFAULT_SIZE)]
    pub size: u32,
}

fn parse_kind(s: &str) -> Result<FixtureKind, String> {
    s.parse()
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<TableFormat, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct BlurArgs {
    /// Gaussian blur sigma in pixels.
    #[arg(long, conflicts_with = "tent")]
    pub sigma: Option<f64>,
    /// Use the 5x5 tent kernel instead of a Gaussian.
    #[arg(long)]
    pub tent: bool,
}

#[derive(Debug, Args)]
pub struct GenLidarImagesArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for `<frame>.bin` maps and `<frame>.png` previews.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub blur: BlurArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 64x64 input, 8 base channels, 4 levels.
    Desk,
    /// 256x256 input, 64 base channels, 8 levels.
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory for the checkpoint and loss log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input modality. [default: rgb]
    #[arg(long, value_parser = parse_modality)]
    pub modality: Option<Modality>,
    /// Frames of this split are used.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Seed for initialization, dropout and sample order. [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the L1 term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Checkpoint period in steps (0 = final only).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Network size preset; overrides the config's network settings.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[command(flatten)]
    pub blur: BlurArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Predict every frame of the manifest split.
    #[arg(long, conflicts_with = "input")]
    pub manifest: Option<PathBuf>,
    /// Predict a single already-encoded input image (PNG).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory for `<name>.bin` maps and `<name>.png` previews.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input modality. [default: rgb]
    #[arg(long, value_parser = parse_modality)]
    pub modality: Option<Modality>,
    /// Manifest split to predict, or `all`.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReconstructMode {
    Grid,
    Raycast,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Dense grid over the map, or visibility-gated ray casting.
    #[arg(long, value_enum)]
    pub mode: ReconstructMode,
    /// Visibility map raster.
    #[arg(long)]
    pub vis: PathBuf,
    /// KITTI-format calibration of the camera and sensors.
    #[arg(long)]
    pub calib: PathBuf,
    /// Sensor index in the calibration.
    #[arg(long, default_value_t = 0)]
    pub sensor: usize,
    /// Output point cloud (`.bin`).
    #[arg(long)]
    pub out: PathBuf,
    /// Visibility at or above which a pixel or ray keeps its point. [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Scan start time in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub scan_start: f64,
    /// Camera depth raster in meters (grid mode, or raycast scene).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Grid spacing in pixels.
    #[arg(long)]
    pub stride: Option<u32>,
    /// Emit grid points in camera coordinates instead of the sensor frame.
    #[arg(long)]
    pub camera_frame: bool,
    /// Triangle scene JSON (raycast).
    #[arg(long, conflicts_with = "depth")]
    pub scene: Option<PathBuf>,
    /// Scan pattern JSON (raycast).
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Sensor trajectory JSON (raycast).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Longest ray in meters (raycast).
    #[arg(long, default_value_t = lidarsim::reconstruct::DEFAULT_MAX_RANGE)]
    pub max_range: f64,
    /// Cast every ray from the pose at scan start.
    #[arg(long)]
    pub no_rolling_shutter: bool,
    /// Also write per-point timestamps next to the cloud.
    #[arg(long)]
    pub timestamps: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted `<frame>.bin` maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth `<frame>.bin` maps.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report table; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table format.
    #[arg(long, value_parser = parse_format, default_value = "markdown")]
    pub format: TableFormat,
    /// Label of the pooled row.
    #[arg(long, default_value = "all")]
    pub label: String,
    /// Per-pair metrics JSON.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Directory for prediction/ground-truth overlay PNGs.
    #[arg(long)]
    pub overlays: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; a freshly initialized network otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Network scale.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Timed forward passes.
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    /// Untimed forward passes before timing.
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
}
