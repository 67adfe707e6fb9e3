//! The single JSON document that configures a run.

use std::path::{Path, PathBuf};

use mmct_core::evaluator::EvalConfig;
use mmct_core::synthdata::GenConfig;
use mmct_core::trainer::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Data generation, model, training and evaluation settings plus the
/// training seed. Every section is optional and unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Seed of parameter initialization, shuffling and augmentation. The
    /// dataset has its own seed in `data`.
    pub seed: u64,
    /// Default output directory of `train` when `--out` is omitted.
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: mmct_core::Error| CliError::Config(e.to_string());
        self.data.validate().map_err(wrap)?;
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.eval.validate().map_err(wrap)?;
        self.check_data_dims(&self.data)?;
        if let Some(&k) = self.eval.tag_ks.iter().find(|&&k| k > self.data.num_tags) {
            return Err(CliError::Config(format!("eval.tag_ks: K = {k} exceeds data.num_tags = {}", self.data.num_tags)));
        }
        Ok(())
    }

    /// Encoder input sizes must match the data a run is given.
    pub fn check_data_dims(&self, data: &GenConfig) -> Result<(), CliError> {
        if self.model.image.input_dim() != data.image_dim {
            return Err(CliError::Config(format!(
                "model.image.layer_dims: input {} does not match image_dim {}",
                self.model.image.input_dim(),
                data.image_dim
            )));
        }
        if self.model.caption.input_dim() != data.caption_dim {
            return Err(CliError::Config(format!(
                "model.caption.layer_dims: input {} does not match caption_dim {}",
                self.model.caption.input_dim(),
                data.caption_dim
            )));
        }
        Ok(())
    }
}
