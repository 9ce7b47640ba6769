//! Full-catalog ranking and Recall@K grouped by cold/warm ground truth.

mod experiment;
mod sweep;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datasets::{EvalQuery, SplitDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::model::{ModelParams, UserCtx};

pub use experiment::{
    comparison_table, run_experiment, train_arm, Arm, ArmOutcome, ExperimentConfig,
};
pub use sweep::{
    sweep, SweepAxis, SweepConfig, SweepPoint, SweepRecord, SweepResult, SweepSummary,
};

pub const DEFAULT_K_VALUES: [usize; 3] = [5, 10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Cold,
    Warm,
    All,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Cold => "cold",
            Group::Warm => "warm",
            Group::All => "all",
        }
    }
}

/// Recall per K, serialized as a JSON object keyed by the decimal K in
/// ascending order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecallAt(pub BTreeMap<usize, f64>);

impl RecallAt {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.0.get(&k).copied()
    }
}

impl Serialize for RecallAt {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(&k.to_string(), v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for RecallAt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RecallAt;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from K to recall")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut a: A,
            ) -> std::result::Result<RecallAt, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = a.next_entry::<String, f64>()? {
                    let k = k.parse().map_err(serde::de::Error::custom)?;
                    out.insert(k, v);
                }
                Ok(RecallAt(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub group: Group,
    pub k_values: Vec<usize>,
    /// `None` when the group has no queries.
    pub recall: Option<RecallAt>,
    pub query_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedRecall {
    pub cold: RecallReport,
    pub warm: RecallReport,
    pub all: RecallReport,
}

impl GroupedRecall {
    pub fn group(&self, g: Group) -> &RecallReport {
        match g {
            Group::Cold => &self.cold,
            Group::Warm => &self.warm,
            Group::All => &self.all,
        }
    }

    pub fn at(&self, g: Group, k: usize) -> Option<f64> {
        self.group(g).recall.as_ref().and_then(|r| r.get(k))
    }

    /// One metrics-file record per group.
    pub fn records(&self, arm: &str, seed: u64) -> Vec<MetricsRecord> {
        [Group::Cold, Group::Warm, Group::All]
            .into_iter()
            .map(|g| {
                let r = self.group(g);
                MetricsRecord {
                    arm: arm.to_string(),
                    group: g,
                    recall: r.recall.clone(),
                    queries: r.query_count,
                    seed,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub arm: String,
    pub group: Group,
    pub recall: Option<RecallAt>,
    pub queries: usize,
    pub seed: u64,
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Descending score, then ascending index.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` best scores, best first, ties by lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// Zero-based position of `target` in the full ranking.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    (0..scores.len())
        .filter(|&i| rank_order(scores, i, target) == Ordering::Less)
        .count()
}

/// Scores queries against a fixed snapshot of item representations.
pub struct Ranker<'a> {
    params: &'a ModelParams,
    split: &'a SplitDataset,
    items: Matrix,
}

impl<'a> Ranker<'a> {
    pub fn new(params: &'a ModelParams, split: &'a SplitDataset) -> Result<Self> {
        if params.n_items() != split.catalog.len() {
            return Err(Error::Data(format!(
                "model has {} items, catalog has {}",
                params.n_items(),
                split.catalog.len()
            )));
        }
        Ok(Ranker {
            params,
            split,
            items: params.item_matrix()?,
        })
    }

    pub fn scores(&self, query: &EvalQuery) -> Result<Vec<f64>> {
        let user = self.split.user_index(&query.user_id)?;
        let history = query
            .history
            .iter()
            .map(|i| self.split.catalog.require(i))
            .collect::<Result<Vec<_>>>()?;
        let u = self.params.user_repr(UserCtx {
            user,
            history: &history,
        })?;
        let scores = self.params.score_all(&u, &self.items);
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite score for user {}",
                query.user_id
            )));
        }
        Ok(scores)
    }

    pub fn topk(&self, query: &EvalQuery, k: usize) -> Result<Vec<String>> {
        if k > self.items.rows {
            return Err(Error::Config(format!(
                "K={k} exceeds catalog size {}",
                self.items.rows
            )));
        }
        Ok(topk_indices(&self.scores(query)?, k)
            .into_iter()
            .map(|i| self.split.catalog.id_of(i).to_string())
            .collect())
    }

    /// Rank of the ground-truth item for every query, in query order.
    pub fn truth_ranks(&self, queries: &[EvalQuery], exec: Exec) -> Result<Vec<usize>> {
        exec.map(queries, |q| {
            let truth = self.split.catalog.require(&q.truth_item)?;
            Ok(rank_of(&self.scores(q)?, truth))
        })
        .into_iter()
        .collect()
    }

    pub fn recall_at_k(
        &self,
        queries: &[EvalQuery],
        k_values: &[usize],
        exec: Exec,
    ) -> Result<GroupedRecall> {
        if queries.is_empty() {
            return Err(Error::Data("no evaluation queries".into()));
        }
        let mut ks = k_values.to_vec();
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() || ks[0] == 0 {
            return Err(Error::Config("K values must be positive".into()));
        }
        let ranks = self.truth_ranks(queries, exec)?;
        let report = |group: Group| {
            let picked: Vec<usize> = ranks
                .iter()
                .zip(queries)
                .filter(|(_, q)| match group {
                    Group::Cold => q.is_cold,
                    Group::Warm => !q.is_cold,
                    Group::All => true,
                })
                .map(|(&r, _)| r)
                .collect();
            let recall = (!picked.is_empty()).then(|| {
                RecallAt(
                    ks.iter()
                        .map(|&k| {
                            let hits = picked.iter().filter(|&&r| r < k).count();
                            (k, hits as f64 / picked.len() as f64)
                        })
                        .collect(),
                )
            });
            RecallReport {
                group,
                k_values: ks.clone(),
                recall,
                query_count: picked.len(),
            }
        };
        Ok(GroupedRecall {
            cold: report(Group::Cold),
            warm: report(Group::Warm),
            all: report(Group::All),
        })
    }
}

pub fn topk(
    params: &ModelParams,
    split: &SplitDataset,
    query: &EvalQuery,
    k: usize,
) -> Result<Vec<String>> {
    Ranker::new(params, split)?.topk(query, k)
}

pub fn recall_at_k(
    params: &ModelParams,
    split: &SplitDataset,
    queries: &[EvalQuery],
    k_values: &[usize],
    exec: Exec,
) -> Result<GroupedRecall> {
    Ranker::new(params, split)?.recall_at_k(queries, k_values, exec)
}
