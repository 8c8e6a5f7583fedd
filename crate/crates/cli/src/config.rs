//! Pipeline configuration: one JSON document, overridden by flags.

use std::path::{Path, PathBuf};

use lidarsim::dataset::Modality;
use lidarsim::lidar_image::BlurConfig;
use lidarsim::pix2pix::{PatchGanConfig, TrainConfig, UNetConfig};
use lidarsim::reconstruct::DEFAULT_THRESHOLD;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub modality: Modality,
    pub blur: BlurConfig,
    /// `train.seed` is ignored; the top-level `seed` drives training.
    pub train: TrainConfig,
    pub unet: UNetConfig,
    pub patchgan: PatchGanConfig,
    pub threshold: f64,
    pub stride: u32,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out: None,
            checkpoint: None,
            modality: Modality::Rgb,
            blur: BlurConfig::default(),
            train: TrainConfig::default(),
            unet: UNetConfig::desk(),
            patchgan: PatchGanConfig::desk(),
            threshold: DEFAULT_THRESHOLD,
            stride: 1,
            seed: DEFAULT_SEED,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out, &mut cfg.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Flag value, else config value, else a usage error naming the flag.
pub fn require<T: Clone>(flag: Option<T>, config: &Option<T>, name: &str) -> Result<T, CliError> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or config file)")))
}
