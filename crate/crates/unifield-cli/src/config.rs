//! Run configuration: nestable TOML with strict key checking, dotted-path
//! `--set` overrides, and a fully resolved copy written beside every run's
//! outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unifield::model::ModelConfig;
use unifield::train::AdamConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_manifests: Vec<PathBuf>,
    /// Held-out manifests; the test split of `train_manifests` when empty.
    pub eval_manifests: Vec<PathBuf>,
    pub points_per_sample: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_manifests: Vec::new(),
            eval_manifests: Vec::new(),
            points_per_sample: 32_768,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub stop_at: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub eval_every: usize,
    /// Chunk size for evaluation-time inference.
    pub chunk: usize,
    pub seed: u64,
    /// Element type: "f64" (default) or "f32".
    pub dtype: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            stop_at: None,
            batch_size: 4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
            eval_every: 0,
            chunk: 8192,
            seed: 0,
            dtype: "f64".into(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    /// Load a TOML config and apply `key=value` overrides on the raw tree,
    /// so unknown keys in overrides are rejected exactly like file keys.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut tree: toml::Value = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        for ov in overrides {
            apply_override(&mut tree, ov)?;
        }
        let config: RunConfig = tree
            .try_into()
            .map_err(|e| CliError::Config(format!("config error: {e}")))?;
        Ok(config)
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

/// Set `a.b.c=value` inside the TOML tree, parsing the value as TOML (so
/// numbers, booleans, and strings all work).
fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set needs key=value, got '{spec}'")))?;
    let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
        .map(|t: toml::Value| t["v"].clone())
        .or_else(|_| toml::from_str(&format!("v = \"{raw}\"")).map(|t: toml::Value| t["v"].clone()))
        .map_err(|e| CliError::Usage(format!("cannot parse override value '{raw}': {e}")))?;

    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override path '{path}' crosses a non-table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

/// Resolve a possibly relative path against UNIFIELD_DATA_ROOT when set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os("UNIFIELD_DATA_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}
