//! Run configuration: a flat `key = value` file with dotted keys, or the
//! JSON echo a previous run wrote to `run_config.json`.
//!
//! ```text
//! # toy experiment
//! variant = normmark
//! model.d_z = 2
//! model.encoder = bag
//! train.epochs = 20
//! data.dir = ../toy-data
//! sweep.orders = 1,2,3
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use normmark::model::{ModelConfig, Variant};
use normmark::synthgen::SynthSpec;
use normmark::trainer::TrainingConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    /// Directory the file names below are relative to.
    pub dir: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub labels: PathBuf,
    /// Fraction of training labels kept at load time.
    pub label_rate: f64,
    pub mask_seed: u64,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            train: PathBuf::from("train.jsonl"),
            dev: PathBuf::from("dev.jsonl"),
            test: PathBuf::from("test.jsonl"),
            labels: PathBuf::from("labels.txt"),
            label_rate: 1.0,
            mask_seed: 0,
        }
    }
}

impl DataPaths {
    pub fn resolve(&self, file: &Path) -> PathBuf {
        self.dir.join(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: (0.6, 0.2, 0.2),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub orders: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            orders: (1..=5).collect(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Leave the `none` class out of macro averages.
    pub exclude_none: bool,
    pub checkpoint: Option<PathBuf>,
    /// Labeled corpus; the test split when unset.
    pub data: Option<PathBuf>,
    /// Vocabulary to encode with; the checkpoint's when unset.
    pub vocab: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub from_corpus: bool,
    pub checkpoint: Option<PathBuf>,
    /// Corpus for bigram counts; `corpus.jsonl` in the data directory when unset.
    pub data: Option<PathBuf>,
    pub compare: Option<PathBuf>,
}

/// Everything a command needs, resolved before any work starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub variant: Variant,
    pub model: ModelConfig,
    pub train: TrainingConfig,
    pub data: DataPaths,
    pub synth: SynthSpec,
    pub split: SplitConfig,
    pub sweep: SweepConfig,
    pub ablate: AblateConfig,
    pub eval: EvalConfig,
    pub heatmap: HeatmapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            variant: Variant::Normmark,
            model: ModelConfig::default(),
            train: TrainingConfig::default(),
            data: DataPaths::default(),
            synth: SynthSpec::default(),
            split: SplitConfig::default(),
            sweep: SweepConfig::default(),
            ablate: AblateConfig::default(),
            eval: EvalConfig::default(),
            heatmap: HeatmapConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.anchor_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    fn anchor_paths(&mut self, base: &Path) {
        let optional = [
            &mut self.eval.checkpoint,
            &mut self.eval.data,
            &mut self.eval.vocab,
            &mut self.heatmap.checkpoint,
            &mut self.heatmap.data,
            &mut self.heatmap.compare,
        ];
        for p in optional.into_iter().flatten().chain([&mut self.data.dir]) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Parses config text without touching paths; `origin` labels errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            let file: Value = serde_json::from_str(text)
                .map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
            let mut base = Self::default().to_value();
            merge(&mut base, &file, "").map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
            return Self::from_value(base).map_err(|e| CliError::Usage(format!("{origin}: {e}")));
        }
        let mut cfg = Self::default();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        for (line, k, v) in pairs {
            cfg.set(&k, &v)
                .map_err(|e| CliError::Usage(format!("{origin}:{line}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), String> {
        let mut value = self.to_value();
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| format!("unknown key `{key}`"))?;
        }
        if slot.is_object() {
            return Err(format!("`{key}` is a section, not a value"));
        }
        *slot = parse_value(slot, text);
        *self = Self::from_value(value).map_err(|e| format!("bad value for `{key}`: {e}"))?;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
        }
        Ok(())
    }

    /// Final step of resolution: the variant decides the model's links and
    /// every path becomes absolute.
    pub fn finish(&mut self, command: &str) -> Result<(), CliError> {
        self.command = command.to_string();
        let order = self.model.markov_order;
        self.model.set_variant(self.variant, order);
        let cwd = std::env::current_dir().map_err(|e| CliError::Usage(format!("no working directory: {e}")))?;
        self.anchor_paths(&cwd);
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.data.label_rate) {
            return Err(CliError::Usage(format!(
                "label rate must lie in [0, 1], got {}",
                self.data.label_rate
            )));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn from_value(value: Value) -> Result<Self, serde_json::Error> {
        serde_json::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Interprets `text` in the shape of the value it replaces.
fn parse_value(current: &Value, text: &str) -> Value {
    let unquoted = text.trim_matches('"');
    match current {
        Value::String(_) => Value::String(unquoted.to_string()),
        Value::Array(_) if !text.starts_with('[') => Value::Array(
            text.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())))
                .collect(),
        ),
        _ => serde_json::from_str(text).unwrap_or_else(|_| Value::String(unquoted.to_string())),
    }
}

/// Overlays `file` on `base`, rejecting keys `base` does not have.
fn merge(base: &mut Value, file: &Value, prefix: &str) -> Result<(), String> {
    let (Some(base), Some(file)) = (base.as_object_mut(), file.as_object()) else {
        return Err("expected a JSON object".into());
    };
    for (k, v) in file {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match base.get_mut(k) {
            None => return Err(format!("unknown key `{key}`")),
            Some(slot @ Value::Object(_)) if v.is_object() => merge(slot, v, &key)?,
            Some(slot) => *slot = v.clone(),
        }
    }
    Ok(())
}
