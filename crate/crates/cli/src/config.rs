//! Run configuration: one TOML document plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use coldaug::augmenter::{AugmentOptions, OracleConfig, DEFAULT_HISTORY_LEN, DEFAULT_TEMPLATE};
use coldaug::evaluation::{Arm, ExperimentConfig, SweepAxis, DEFAULT_K_VALUES};
use coldaug::model::ModelConfig;
use coldaug::synthworld::WorldSpec;
use coldaug::training::TrainConfig;
use coldaug::{Error, Exec, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub k_values: Vec<usize>,
    pub exec: Exec,
    pub paths: Paths,
    pub split: SplitSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub oracle: OracleConfig,
    pub world: WorldSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "default".into(),
            seed: 0,
            k_values: DEFAULT_K_VALUES.to_vec(),
            exec: Exec::Parallel,
            paths: Paths::default(),
            split: SplitSection::default(),
            augment: AugmentSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            oracle: OracleConfig::default(),
            world: WorldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Parent of every run directory.
    pub runs: PathBuf,
    /// Defaults to the world's `interactions.tsv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
    /// Defaults to the world's `items.jsonl` when `interactions` is unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub items: Option<PathBuf>,
    /// Synthetic world archive; defaults to `<run>/world`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            runs: "runs".into(),
            interactions: None,
            items: None,
            world: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub fraction: f64,
    pub pairs_per_query: usize,
    pub history_len: usize,
    pub chunk_size: usize,
    pub template: String,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            fraction: 0.2,
            pairs_per_query: 1,
            history_len: DEFAULT_HISTORY_LEN,
            chunk_size: 256,
            template: DEFAULT_TEMPLATE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub arms: Vec<Arm>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            arms: vec![Arm::NoAug, Arm::Content, Arm::Aug],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Seeds `seed .. seed + seeds`.
    pub seeds: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::AugFraction,
            values: vec![0.0, 0.2, 0.4],
            seeds: 5,
        }
    }
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides` in
    /// order. Tables merge key by key; everything else is replaced.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table =
            Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        merge(&mut table, file);
        for (key, value) in overrides {
            set_key(&mut table, key, parse_value(value))?;
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let safe = !self.run_id.is_empty()
            && self.run_id != "."
            && self.run_id != ".."
            && self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !safe {
            return Err(Error::Config(format!(
                "run_id {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.run_id
            )));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::Config(
                "k_values must be non-empty and positive".into(),
            ));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        self.train.validate()?;
        self.oracle.validate()?;
        self.world.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths.runs.join(&self.run_id)
    }

    pub fn world_dir(&self) -> PathBuf {
        self.paths
            .world
            .clone()
            .unwrap_or_else(|| self.run_dir().join("world"))
    }

    pub fn split_dir(&self) -> PathBuf {
        self.run_dir().join("split")
    }

    pub fn triples_path(&self) -> PathBuf {
        self.run_dir().join("triples.jsonl")
    }

    pub fn replay_path(&self) -> PathBuf {
        self.run_dir().join("replay.jsonl")
    }

    pub fn checkpoint_path(&self, arm: Arm) -> PathBuf {
        self.run_dir().join(format!("model-{}.bin", arm.name()))
    }

    /// `(interactions, items)`; items are optional.
    pub fn inputs(&self) -> (PathBuf, Option<PathBuf>) {
        match &self.paths.interactions {
            Some(p) => (p.clone(), self.paths.items.clone()),
            None => {
                let w = self.world_dir();
                (
                    w.join("interactions.tsv"),
                    Some(
                        self.paths
                            .items
                            .clone()
                            .unwrap_or_else(|| w.join("items.jsonl")),
                    ),
                )
            }
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            k_values: self.k_values.clone(),
            arms: self.eval.arms.clone(),
        }
    }

    pub fn augment_options(&self) -> AugmentOptions {
        AugmentOptions {
            fraction: self.augment.fraction,
            pairs_per_query: self.augment.pairs_per_query,
            seed: self.seed,
            template: self.augment.template.clone(),
            history_len: self.augment.history_len,
            chunk_size: self.augment.chunk_size,
            output: None,
            record: None,
        }
    }
}

/// `KEY=VALUE` as given on the command line.
pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn set_key(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "cannot set {key}: {part} is not a table"
                )))
            }
        };
    }
    if last.is_empty() {
        return Err(Error::Config(format!("empty key in override {key:?}")));
    }
    match (cur.get_mut(last), value) {
        (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
        (_, value) => {
            cur.insert(last.to_string(), value);
        }
    }
    Ok(())
}
