use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{train_arm, Arm, ExperimentConfig, Group, GroupedRecall, Ranker, RecallAt};
use crate::augmenter::{build_oracle, generate_augmentations, AugmentOptions, OracleConfig};
use crate::datasets::{build_eval_queries, SplitDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::synthworld::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Fraction of users queried for augmentation; 0 trains without triples.
    AugFraction,
    /// Flip probability of a noisy wrapper around the configured oracle.
    FlipProb,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aug_fraction" => Ok(SweepAxis::AugFraction),
            "flip_prob" => Ok(SweepAxis::FlipProb),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::AugFraction => "aug_fraction",
            SweepAxis::FlipProb => "flip_prob",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SweepConfig {
    pub experiment: ExperimentConfig,
    pub augment: AugmentOptions,
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub triples: usize,
    pub recall: GroupedRecall,
}

/// One line of the plot-ready sweep file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis: SweepAxis,
    pub value: f64,
    pub arm: String,
    pub group: Group,
    pub recall: Option<RecallAt>,
    pub queries: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub value: f64,
    pub group: Group,
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub stddev: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub summary: Vec<SweepSummary>,
}

impl SweepResult {
    pub fn records(&self) -> Vec<SweepRecord> {
        self.points
            .iter()
            .flat_map(|p| {
                p.recall
                    .records(Arm::Aug.name(), p.seed)
                    .into_iter()
                    .map(move |r| SweepRecord {
                        axis: self.axis,
                        value: p.value,
                        arm: r.arm,
                        group: r.group,
                        recall: r.recall,
                        queries: r.queries,
                        seed: r.seed,
                    })
            })
            .collect()
    }

    pub fn mean(&self, value: f64, group: Group, k: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.value == value && s.group == group && s.k == k)
            .map(|s| s.mean)
    }
}

fn summarize(points: &[SweepPoint], values: &[f64]) -> Vec<SweepSummary> {
    let mut out = Vec::new();
    for &value in values {
        let at: Vec<&SweepPoint> = points.iter().filter(|p| p.value == value).collect();
        for group in [Group::Cold, Group::Warm, Group::All] {
            let ks = at
                .first()
                .map(|p| p.recall.group(group).k_values.clone())
                .unwrap_or_default();
            for k in ks {
                let xs: Vec<f64> = at.iter().filter_map(|p| p.recall.at(group, k)).collect();
                if xs.is_empty() {
                    continue;
                }
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let stddev = if xs.len() > 1 {
                    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                out.push(SweepSummary {
                    value,
                    group,
                    k,
                    mean,
                    stddev,
                    seeds: xs.len(),
                });
            }
        }
    }
    out
}

/// Runs the aug arm for every (value, seed): regenerates triples with the
/// swept setting, trains, and evaluates. Seeds drive augmentation sampling,
/// model init and training alike.
pub fn sweep(
    split: &SplitDataset,
    world: Option<&Arc<World>>,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    config: &SweepConfig,
    exec: Exec,
) -> Result<SweepResult> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one value and one seed".into(),
        ));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "sweep values must be strictly increasing".into(),
        ));
    }
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!(
                "{} value {v} outside [0, 1]",
                axis.name()
            )));
        }
    }
    let (queries, _) = build_eval_queries(split);
    let grid: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let points = exec
        .map(&grid, |&(value, seed)| {
            let (oracle_config, fraction) = match axis {
                SweepAxis::AugFraction => (config.oracle.clone(), value),
                SweepAxis::FlipProb => (
                    OracleConfig::Noisy {
                        inner: Box::new(config.oracle.clone()),
                        flip_prob: value,
                        seed,
                    },
                    config.augment.fraction,
                ),
            };
            let triples = if fraction > 0.0 {
                let oracle = build_oracle(&oracle_config, &split.catalog, world)?;
                let opts = AugmentOptions {
                    fraction,
                    seed,
                    output: None,
                    record: None,
                    ..config.augment.clone()
                };
                generate_augmentations(split, oracle.as_ref(), &opts)?.triples
            } else {
                Vec::new()
            };
            let (params, _) = train_arm(split, Arm::Aug, &triples, &config.experiment, seed)?;
            let recall = Ranker::new(&params, split)?.recall_at_k(
                &queries,
                &config.experiment.k_values,
                exec,
            )?;
            Ok(SweepPoint {
                value,
                seed,
                triples: triples.len(),
                recall,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&points, values);
    Ok(SweepResult {
        axis,
        points,
        summary,
    })
}
