//! Versioned JSON documents (dataset, checkpoint, report, config echo) and
//! the per-epoch metrics CSV.
//!
//! Every JSON document starts with `format` and `version` fields. Files with
//! a different version are rejected before the rest is parsed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmct_core::encoders::{EncoderParams, MomentumPair};
use mmct_core::evaluator::EvalReport;
use mmct_core::rng::SeededRng;
use mmct_core::synthdata::{GenConfig, Sample, SplitDataset};
use mmct_core::trainer::{EpochMetrics, OptimizerState, TrainState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR: &str = concat!("mmct ", env!("CARGO_PKG_VERSION"));

pub const DATASET_FORMAT: &str = "mmct-dataset";
pub const CHECKPOINT_FORMAT: &str = "mmct-checkpoint";
pub const REPORT_FORMAT: &str = "mmct-report";
pub const CONFIG_FORMAT: &str = "mmct-config";

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: GenConfig,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DatasetFile {
    pub fn new(config: GenConfig, data: SplitDataset) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            generator: GENERATOR.into(),
            config,
            train: data.train,
            test: data.test,
        }
    }

    pub fn split(&self) -> SplitDataset {
        SplitDataset { train: self.train.clone(), test: self.test.clone() }
    }
}

/// Config echo written next to training outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: RunConfig,
}

impl ConfigEcho {
    pub fn new(config: RunConfig) -> Self {
        Self { format: CONFIG_FORMAT.into(), version: FORMAT_VERSION, generator: GENERATOR.into(), config }
    }
}

/// Training state at an epoch boundary. Parameters are stored as named flat
/// arrays in row-major order under `"{image|caption}.{query|key|velocity}.{tensor}"`.
/// Key queues are not stored; they are refilled on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: RunConfig,
    pub epoch: usize,
    pub step: u64,
    pub rng_state: u64,
    pub history: Vec<EpochMetrics>,
    pub params: BTreeMap<String, Vec<f64>>,
}

fn roles(state: &TrainState) -> [(&'static str, &EncoderParams); 6] {
    [
        ("image.query", &state.image.query),
        ("image.key", &state.image.key),
        ("image.velocity", &state.image_opt.velocity),
        ("caption.query", &state.caption.query),
        ("caption.key", &state.caption.key),
        ("caption.velocity", &state.caption_opt.velocity),
    ]
}

impl CheckpointFile {
    pub fn from_state(config: &RunConfig, state: &TrainState, history: &[EpochMetrics]) -> Self {
        let mut params = BTreeMap::new();
        for (role, enc) in roles(state) {
            for (name, tensor) in enc.named_tensors() {
                params.insert(format!("{role}.{name}"), tensor.to_vec());
            }
        }
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: FORMAT_VERSION,
            generator: GENERATOR.into(),
            config: config.clone(),
            epoch: history.len(),
            step: state.step,
            rng_state: state.rng.state(),
            history: history.to_vec(),
            params,
        }
    }

    /// Rebuilds the state with empty queues. `path` is only used in errors.
    pub fn to_state(&self, path: &Path) -> Result<TrainState, CliError> {
        let model = &self.config.model;
        let bad = |message: String| CliError::Format { what: "checkpoint", path: path.to_path_buf(), message };
        let template = mmct_core::encoders::init_encoder(&model.image, &mut SeededRng::new(0))?;
        let caption_template = mmct_core::encoders::init_encoder(&model.caption, &mut SeededRng::new(0))?;
        let mut used = 0usize;
        let mut fill = |role: &str, shape: &EncoderParams| -> Result<EncoderParams, CliError> {
            let mut enc = shape.clone();
            let names: Vec<String> = enc.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (name, slot) in names.iter().zip(enc.tensors_mut()) {
                let key = format!("{role}.{name}");
                let values = self.params.get(&key).ok_or_else(|| bad(format!("missing tensor {key}")))?;
                if values.len() != slot.len() {
                    return Err(bad(format!("tensor {key} has {} values, expected {}", values.len(), slot.len())));
                }
                slot.copy_from_slice(values);
                used += 1;
            }
            Ok(enc)
        };
        let image_query = fill("image.query", &template)?;
        let image_key = fill("image.key", &template)?;
        let image_velocity = fill("image.velocity", &template)?;
        let caption_query = fill("caption.query", &caption_template)?;
        let caption_key = fill("caption.key", &caption_template)?;
        let caption_velocity = fill("caption.velocity", &caption_template)?;
        if used != self.params.len() {
            return Err(bad(format!("{} unexpected tensors", self.params.len() - used)));
        }
        let mut state = TrainState::from_parts(model, image_query, caption_query, SeededRng::from_state(self.rng_state))?;
        state.image = MomentumPair { key: image_key, ..state.image };
        state.caption = MomentumPair { key: caption_key, ..state.caption };
        state.image_opt = OptimizerState { velocity: image_velocity };
        state.caption_opt = OptimizerState { velocity: caption_velocity };
        state.step = self.step;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config: RunConfig,
    pub epoch: usize,
    pub step: u64,
    pub report: EvalReport,
}

impl ReportFile {
    pub fn new(config: RunConfig, epoch: usize, step: u64, report: EvalReport) -> Self {
        Self { format: REPORT_FORMAT.into(), version: FORMAT_VERSION, generator: GENERATOR.into(), config, epoch, step, report }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub lr_image: f64,
    pub lr_text: f64,
    pub j_ii: f64,
    pub j_tag: f64,
    pub j_cc: f64,
    pub j_ic: f64,
    pub j_ci: f64,
    pub total: f64,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        let t = m.terms;
        Self { epoch: m.epoch, lr_image: m.lr_image, lr_text: m.lr_text, j_ii: t.j_ii, j_tag: t.j_tag, j_cc: t.j_cc, j_ic: t.j_ic, j_ci: t.j_ci, total: t.total }
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if history.is_empty() {
        w.write_record(["epoch", "lr_image", "lr_text", "j_ii", "j_tag", "j_cc", "j_ic", "j_ci", "total"])
            .map_err(|e| CliError::Check(e.to_string()))?;
    }
    for m in history {
        w.serialize(MetricsRow::from(m)).map_err(|e| CliError::Check(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Check(e.to_string()))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), CliError> {
    let mut bytes = if pretty { serde_json::to_vec_pretty(value) } else { serde_json::to_vec(value) }
        .map_err(|e| CliError::Check(format!("cannot serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a versioned document: checks `format` and `version` first, then
/// parses the rest.
pub fn read_versioned<T: DeserializeOwned>(path: &Path, what: &'static str, format: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |message: String| CliError::Format { what, path: path.to_path_buf(), message };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let found_format = value.get("format").and_then(|v| v.as_str()).ok_or_else(|| bad("missing format field".into()))?;
    if found_format != format {
        return Err(bad(format!("format is {found_format:?}, expected {format:?}")));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| bad("missing version field".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(CliError::Version { what, path: path.to_path_buf(), found: version, expected: FORMAT_VERSION });
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    read_versioned(path, "dataset", DATASET_FORMAT)
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile, CliError> {
    read_versioned(path, "checkpoint", CHECKPOINT_FORMAT)
}

pub fn read_report(path: &Path) -> Result<ReportFile, CliError> {
    read_versioned(path, "report", REPORT_FORMAT)
}
