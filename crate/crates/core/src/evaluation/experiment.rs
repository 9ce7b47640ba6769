use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Group, GroupedRecall, Ranker, DEFAULT_K_VALUES};
use crate::datasets::{build_eval_queries, SplitDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{init_params, Backbone, ModelConfig, ModelParams};
use crate::training::{train, AugTriple, EpochLog, TrainConfig, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// The configured backbone trained on interactions only.
    NoAug,
    /// TF-IDF content model trained on interactions only.
    Content,
    /// The configured backbone with the pairwise augmentation loss.
    Aug,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::NoAug => "no_aug",
            Arm::Content => "content",
            Arm::Aug => "aug",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::NoAug => "w/o aug",
            Arm::Content => "content",
            Arm::Aug => "w/ aug",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "no_aug" => Ok(Arm::NoAug),
            "content" => Ok(Arm::Content),
            "aug" => Ok(Arm::Aug),
            other => Err(Error::Config(format!("unknown arm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub k_values: Vec<usize>,
    pub arms: Vec<Arm>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            k_values: DEFAULT_K_VALUES.to_vec(),
            arms: vec![Arm::NoAug, Arm::Content, Arm::Aug],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub backbone: Backbone,
    pub seed: u64,
    pub recall: GroupedRecall,
    pub log: Vec<EpochLog>,
    pub params: ModelParams,
}

/// Initializes and trains the model for one arm. Model init and training
/// both use `seed`.
pub fn train_arm(
    split: &SplitDataset,
    arm: Arm,
    triples: &[AugTriple],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    let mut model = config.model.clone();
    if arm == Arm::Content {
        model.backbone = Backbone::ContentMf;
    }
    let triples = if arm == Arm::Aug { triples } else { &[] };
    let data = TrainingData::build(split, triples, model.backbone)?;
    let initial = init_params(&model, split.users.len(), &split.catalog, seed)?;
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let outcome = train(&initial, &data, &train_config)?;
    Ok((outcome.params, outcome.log))
}

/// Trains and evaluates every configured arm. The aug arm needs `triples`.
pub fn run_experiment(
    split: &SplitDataset,
    triples: Option<&[AugTriple]>,
    config: &ExperimentConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<ArmOutcome>> {
    if config.arms.contains(&Arm::Aug) && triples.is_none() {
        return Err(Error::Config(
            "the aug arm needs an augmentation triple file".into(),
        ));
    }
    let (queries, _) = build_eval_queries(split);
    exec.map(&config.arms, |&arm| {
        let (params, log) = train_arm(split, arm, triples.unwrap_or(&[]), config, seed)?;
        let recall = Ranker::new(&params, split)?.recall_at_k(&queries, &config.k_values, exec)?;
        Ok(ArmOutcome {
            arm,
            backbone: params.backbone,
            seed,
            recall,
            log,
            params,
        })
    })
    .into_iter()
    .collect()
}

fn cell(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Rows per arm, cold then warm Recall@K columns, in percent.
pub fn comparison_table(outcomes: &[ArmOutcome]) -> String {
    let ks = outcomes
        .first()
        .map(|o| o.recall.all.k_values.clone())
        .unwrap_or_default();
    let mut out = String::new();
    let _ = write!(out, "{:<10} {:<8}", "backbone", "method");
    for g in [Group::Cold, Group::Warm] {
        for k in &ks {
            let _ = write!(out, " {:>9}", format!("{} R@{k}", g.name()));
        }
    }
    out.push('\n');
    for o in outcomes {
        let _ = write!(out, "{:<10} {:<8}", o.backbone.name(), o.arm.label());
        for g in [Group::Cold, Group::Warm] {
            for &k in &ks {
                let _ = write!(out, " {:>9}", cell(o.recall.at(g, k)));
            }
        }
        out.push('\n');
    }
    out
}
