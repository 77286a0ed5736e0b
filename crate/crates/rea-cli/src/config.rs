//! Run configuration: a JSON file mirroring the library configs, with
//! every field overridable from the command line via `--set key=value`.

use std::path::{Path, PathBuf};

use rea_core::data::{CsvSchema, Partition, SplitMode, SynthConfig};
use rea_core::train::{RetrievalMode, TrainConfig};

use crate::CliError;

/// Environment variable prepended to relative `out_dir` values.
pub const OUT_ROOT_ENV: &str = "REA_OUT_ROOT";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub predict: PredictConfig,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub offset_years: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    /// Where the split JSON lives; defaults to `<out_dir>/split.json`.
    pub path: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::Temporal,
            offset_years: 3.0,
            train_frac: 0.8,
            val_frac: 0.1,
            seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub partition: Partition,
    /// Defaults to `<out_dir>/checkpoint_final.rck`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<out_dir>/checkpoint_refresh_prev.rck` when present.
    pub retrieval_checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            partition: Partition::Test,
            checkpoint: None,
            retrieval_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub modes: Vec<RetrievalMode>,
    /// k1 values; each cell retrieves 2·k1 comparables in total.
    pub k_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Also emit the baseline comparison report (LR, KNN, REA, EREA with
    /// mean ± 95% CI over `seeds`).
    pub baselines: bool,
    /// k for the kNN baseline row; defaults to 2·k1 of the train config.
    pub baseline_k: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modes: vec![
                RetrievalMode::GeoOnly,
                RetrievalMode::VectorOnly,
                RetrievalMode::Hybrid,
            ],
            k_list: vec![2, 5],
            seeds: vec![0, 1, 2, 3, 4],
            baselines: false,
            baseline_k: None,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub target_id: Option<u64>,
    /// Single-row CSV in the training schema for an ad-hoc target.
    pub record_csv: Option<PathBuf>,
}

/// Applies one `key=value` override onto the raw JSON tree. The key is a
/// dotted path; the value is parsed as JSON when possible, else taken as a
/// string.
fn apply_set(root: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("--set '{spec}' is not of the form key=value"))
    })?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));

    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            return Err(CliError::Validation(format!(
                "--set '{spec}': empty path segment"
            )));
        }
        let obj = cursor.as_object_mut().ok_or_else(|| {
            CliError::Validation(format!(
                "--set '{spec}': '{}' is not an object",
                segments[..i].join(".")
            ))
        })?;
        if i == segments.len() - 1 {
            obj.insert(segment.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split never yields an empty iterator")
}

/// Loads the config file, applies `--set` overrides, resolves `out_dir`
/// against `REA_OUT_ROOT`, and rejects unknown keys.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut tree: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!("config {} is not valid JSON: {e}", path.display()))
    })?;
    for spec in sets {
        apply_set(&mut tree, spec)?;
    }
    let mut config: RunConfig = serde_json::from_value(tree.clone())
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;

    if config.out_dir.is_relative() {
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            if !root.is_empty() {
                config.out_dir = PathBuf::from(root).join(&config.out_dir);
            }
        }
    }
    Ok(config)
}

impl RunConfig {
    pub fn split_path(&self) -> PathBuf {
        self.split
            .path
            .clone()
            .unwrap_or_else(|| self.out_dir.join("split.json"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.eval
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint_final.rck"))
    }

    pub fn retrieval_checkpoint_path(&self) -> PathBuf {
        self.eval
            .retrieval_checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint_refresh_prev.rck"))
    }

    /// Echo attached to emitted reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overrides_nested_and_typed() {
        let mut tree: serde_json::Value =
            serde_json::from_str(r#"{"out_dir":"x","train":{"epochs":50}}"#).unwrap();
        apply_set(&mut tree, "train.epochs=3").unwrap();
        apply_set(&mut tree, "train.mode=geo_only").unwrap();
        apply_set(&mut tree, "sweep.seeds=[1,2]").unwrap();
        assert_eq!(tree["train"]["epochs"], serde_json::json!(3));
        assert_eq!(tree["train"]["mode"], serde_json::json!("geo_only"));
        assert_eq!(tree["sweep"]["seeds"], serde_json::json!([1, 2]));
    }

    #[test]
    fn malformed_set_is_rejected() {
        let mut tree = serde_json::json!({});
        assert!(apply_set(&mut tree, "no_equals").is_err());
        assert!(apply_set(&mut tree, "a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"out_dir":"x","bogus":1}"#).unwrap();
        let err = load_config(&path, &[]).unwrap_err();
        match err {
            CliError::Validation(msg) => assert!(msg.contains("bogus"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
