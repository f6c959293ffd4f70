//! JSON run configs: loading, flag overrides and hashing.

use std::path::{Path, PathBuf};

use odesig_core::datagen::{GeneratorSpec, MissingMode, MixedCorruption};
use odesig_core::evalnet::{ExperimentConfig, ExperimentKind};
use odesig_core::training::{ModelDims, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Reads the config document; no path means an empty document.
pub fn load_document(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid JSON: {e}", path.display())))?;
    if !doc.is_object() {
        return Err(CliError::Usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    Ok(doc)
}

/// Sets a dotted key, creating intermediate objects.
pub fn set_key(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("invalid config key '{key}'")));
    }
    for part in &parts[..parts.len() - 1] {
        let map = node.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!("config key '{key}' crosses a non-object value"))
        })?;
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("config key '{key}' crosses a non-object value")))?;
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies `key=value`; the value is read as JSON, falling back to a string.
pub fn apply_assignment(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{assignment}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_key(doc, key.trim(), value)
}

pub fn get_key<'a>(doc: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(doc, |node, part| node.get(part))
}

/// Deserializes a document into a typed config.
pub fn parse<T: DeserializeOwned>(doc: Value) -> Result<T, CliError> {
    serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

/// Keys naming where outputs go; they do not change output content.
const OUTPUT_KEYS: [&str; 2] = ["output_dir", "output"];

/// The fully defaulted config without its output location.
pub fn normalized<T: Serialize>(config: &T) -> Value {
    let mut value = serde_json::to_value(config).expect("configs serialize");
    if let Some(map) = value.as_object_mut() {
        for key in OUTPUT_KEYS {
            map.remove(key);
        }
    }
    value
}

/// SHA-256 of the compact JSON of [`normalized`].
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(&normalized(config)).expect("configs serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn require_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::Usage("a 'seed' is required for this command".into()))
}

fn require_path(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    path.clone()
        .ok_or_else(|| CliError::Usage(format!("config key '{key}' is required")))
}

/// How generated samples are corrupted before writing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Corruption {
    #[default]
    None,
    Missing {
        mode: MissingMode,
        steps: usize,
    },
    Offset {
        offset: f64,
    },
    Frequency {
        period: String,
    },
    Mixed(MixedCorruption),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: Option<u64>,
    pub generator: GeneratorSpec,
    pub corruption: Corruption,
    pub output_dir: Option<PathBuf>,
}

impl GenerateConfig {
    /// Fills the generator seed from the master seed.
    pub fn resolve(mut self) -> Result<(Self, u64, PathBuf), CliError> {
        let seed = require_seed(self.seed)?;
        let out = require_path(&self.output_dir, "output_dir")?;
        self.generator.seed = seed;
        self.generator.validate().map_err(usage)?;
        Ok((self, seed, out))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: Option<u64>,
    pub signals: Option<PathBuf>,
    pub atlas: Option<PathBuf>,
    /// Held-out signals for parameter selection; the final epoch is kept
    /// when absent.
    pub validation_signals: Option<PathBuf>,
    /// Spatial-graph distance threshold; the atlas default when absent.
    pub spatial_threshold: Option<f64>,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
}

pub struct TrainPaths {
    pub signals: PathBuf,
    pub atlas: PathBuf,
    pub output_dir: PathBuf,
}

impl TrainRunConfig {
    pub fn resolve(mut self) -> Result<(Self, u64, TrainPaths), CliError> {
        let seed = require_seed(self.seed)?;
        let paths = TrainPaths {
            signals: require_path(&self.signals, "signals")?,
            atlas: require_path(&self.atlas, "atlas")?,
            output_dir: require_path(&self.output_dir, "output_dir")?,
        };
        self.train.seed = seed;
        self.train.validate().map_err(usage)?;
        Ok((self, seed, paths))
    }
}

/// Regular reconstruction grid of `points` timestamps from `start` to `end`
/// inclusive; each bound defaults to the sample's own first or last time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub start: Option<f64>,
    pub end: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 50,
            start: None,
            end: None,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.points == 0 {
            return Err(CliError::Usage("grid.points must be at least 1".into()));
        }
        if let (Some(a), Some(b)) = (self.start, self.end)
            && !(b > a)
            && self.points > 1
        {
            return Err(CliError::Usage("grid.end must exceed grid.start".into()));
        }
        Ok(())
    }

    pub fn times(&self, first: f64, last: f64) -> Vec<f64> {
        let a = self.start.unwrap_or(first);
        let b = self.end.unwrap_or(last);
        if self.points == 1 {
            return vec![a];
        }
        let step = (b - a) / (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                if k + 1 == self.points {
                    b
                } else {
                    a + k as f64 * step
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub checkpoint: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub grid: GridSpec,
    /// Model shape the caller expects; checked against the checkpoint.
    pub dims: Option<ModelDims>,
    pub output: Option<PathBuf>,
}

pub struct ReconstructPaths {
    pub checkpoint: PathBuf,
    pub signals: PathBuf,
    pub output: PathBuf,
}

impl ReconstructConfig {
    pub fn resolve(self) -> Result<(Self, ReconstructPaths), CliError> {
        self.grid.validate()?;
        let paths = ReconstructPaths {
            checkpoint: require_path(&self.checkpoint, "checkpoint")?,
            signals: require_path(&self.signals, "signals")?,
            output: require_path(&self.output, "output")?,
        };
        Ok((self, paths))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub seed: Option<u64>,
    pub experiment: ExperimentConfig,
    pub output_dir: Option<PathBuf>,
}

impl EvaluateConfig {
    /// Checks the experiment kind before the rest of the document, so an
    /// unknown kind is reported with the list of valid ones.
    pub fn check_kind(doc: &Value) -> Result<(), CliError> {
        match get_key(doc, "experiment.kind") {
            None => Ok(()),
            Some(Value::String(kind)) => ExperimentKind::parse(kind).map(|_| ()).map_err(usage),
            Some(other) => Err(CliError::Usage(format!(
                "experiment.kind must be a string, got {other}"
            ))),
        }
    }

    pub fn resolve(mut self) -> Result<(Self, u64, PathBuf), CliError> {
        let seed = require_seed(self.seed)?;
        let out = require_path(&self.output_dir, "output_dir")?;
        self.experiment.master_seed = seed;
        self.experiment.validate().map_err(usage)?;
        Ok((self, seed, out))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub seed: Option<u64>,
    pub repetitions: usize,
    /// Decode grid lengths; each should double the previous.
    pub decode_points: Vec<usize>,
    pub encoder_lengths: Vec<usize>,
    pub dims: ModelDims,
    pub n_rois: usize,
    pub steps_per_unit: usize,
    pub output: Option<PathBuf>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            seed: None,
            repetitions: 5,
            decode_points: vec![64, 128],
            encoder_lengths: vec![32, 64, 128, 256],
            dims: ModelDims::default(),
            n_rois: 8,
            steps_per_unit: TrainConfig::default().substeps,
            output: None,
        }
    }
}

impl RuntimeConfig {
    pub fn resolve(self) -> Result<(Self, u64), CliError> {
        let seed = require_seed(self.seed)?;
        self.dims.validate().map_err(usage)?;
        if self.repetitions == 0 || self.steps_per_unit == 0 || self.n_rois < 2 {
            return Err(CliError::Usage(
                "repetitions and steps_per_unit must be positive and n_rois at least 2".into(),
            ));
        }
        if self.decode_points.len() < 2 || self.encoder_lengths.len() < 2 {
            return Err(CliError::Usage(
                "need at least two decode and two encoder sizes".into(),
            ));
        }
        if self
            .decode_points
            .iter()
            .chain(&self.encoder_lengths)
            .any(|&n| n < 2)
        {
            return Err(CliError::Usage("benchmark sizes must be at least 2".into()));
        }
        Ok((self, seed))
    }
}

fn usage(e: odesig_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn assignments_create_nested_keys() {
        let mut doc = json!({"train": {"epochs": 3}});
        apply_assignment(&mut doc, "train.dims.latent_dim=4").unwrap();
        apply_assignment(&mut doc, "output_dir=out/run").unwrap();
        assert_eq!(
            doc,
            json!({"train": {"epochs": 3, "dims": {"latent_dim": 4}}, "output_dir": "out/run"})
        );
        assert!(apply_assignment(&mut doc, "train.epochs.x=1").is_err());
        assert!(apply_assignment(&mut doc, "novalue").is_err());
    }

    #[test]
    fn hash_ignores_key_order_and_defaults() {
        let a: GenerateConfig = parse(json!({"seed": 1, "output_dir": "x"})).unwrap();
        let b: GenerateConfig =
            parse(json!({"output_dir": "x", "seed": 1, "corruption": {"kind": "none"}})).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c: GenerateConfig = parse(json!({"seed": 2, "output_dir": "x"})).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        let moved: GenerateConfig = parse(json!({"seed": 1, "output_dir": "elsewhere"})).unwrap();
        assert_eq!(config_hash(&a), config_hash(&moved));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn unknown_keys_and_kinds_are_usage_errors() {
        assert!(matches!(
            parse::<GenerateConfig>(json!({"sede": 1})),
            Err(CliError::Usage(_))
        ));
        let err = EvaluateConfig::check_kind(&json!({"experiment": {"kind": "foo"}})).unwrap_err();
        let text = err.to_string();
        assert!(matches!(err, CliError::Usage(_)));
        for kind in ExperimentKind::ALL {
            assert!(text.contains(kind.name()), "{text}");
        }
    }

    #[test]
    fn seed_is_required() {
        let cfg: GenerateConfig = parse(json!({"output_dir": "x"})).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn grid_times() {
        let g = GridSpec {
            points: 5,
            start: None,
            end: None,
        };
        assert_eq!(g.times(0.0, 4.0), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let one = GridSpec {
            points: 1,
            start: None,
            end: None,
        };
        assert_eq!(one.times(2.0, 9.0), vec![2.0]);
    }
}
