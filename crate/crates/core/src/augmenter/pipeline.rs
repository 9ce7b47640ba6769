use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{PairRequest, PreferenceOracle, ReplayRecord};
use super::{
    build_prompt, sample_cold_pair, sample_user_queries, Choice, DEFAULT_HISTORY_LEN,
    DEFAULT_TEMPLATE,
};
use crate::datasets::{ItemMeta, SplitDataset};
use crate::error::{Error, Result};
use crate::training::{read_triples, AugTriple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub fraction: f64,
    pub pairs_per_query: usize,
    pub seed: u64,
    pub template: String,
    pub history_len: usize,
    /// Requests sent to the oracle between appends to the output files.
    pub chunk_size: usize,
    /// Append triples here, skipping prompts already present.
    pub output: Option<PathBuf>,
    /// Append every answer here in the replay format.
    pub record: Option<PathBuf>,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            fraction: 0.2,
            pairs_per_query: 1,
            seed: 0,
            template: DEFAULT_TEMPLATE.to_string(),
            history_len: DEFAULT_HISTORY_LEN,
            chunk_size: 256,
            output: None,
            record: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub queries: usize,
    pub pairs: usize,
    pub triples: usize,
    pub abstains: usize,
    pub abstain_rate: f64,
    pub p50_latency_ms: Option<u64>,
    pub p99_latency_ms: Option<u64>,
    /// Pairs already answered in an existing output file.
    pub resumed: usize,
    pub digests: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AugmentOutput {
    /// Every triple of the run, including resumed ones, in request order.
    pub triples: Vec<AugTriple>,
    pub records: Vec<ReplayRecord>,
    pub report: GenerationReport,
}

fn nearest_rank(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Ok(());
    }
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item)?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Samples queries and cold pairs, asks `oracle` about each, and turns the
/// answers into triples. The rendered A/B order is swapped with probability
/// one half; answers refer to the rendered order.
pub fn generate_augmentations(
    split: &SplitDataset,
    oracle: &dyn PreferenceOracle,
    opts: &AugmentOptions,
) -> Result<AugmentOutput> {
    if opts.pairs_per_query == 0 {
        return Err(Error::Config("pairs_per_query must be at least 1".into()));
    }
    let cold = split.catalog.cold_list();
    if cold.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 cold items, have {}",
            cold.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let queries = sample_user_queries(split, opts.fraction, opts.history_len, &mut rng)?;

    let meta = |id: &str| -> ItemMeta {
        split
            .catalog
            .meta_of(id)
            .cloned()
            .unwrap_or_else(|| ItemMeta {
                item_id: id.to_string(),
                title: id.to_string(),
                categories: vec![],
            })
    };
    let mut requests = Vec::with_capacity(queries.len() * opts.pairs_per_query);
    for query in &queries {
        for _ in 0..opts.pairs_per_query {
            let pair = sample_cold_pair(&cold, &mut rng)?;
            let (a, b) = if rng.random_bool(0.5) {
                (pair.b, pair.a)
            } else {
                (pair.a, pair.b)
            };
            let (a, b) = (meta(&a), meta(&b));
            let prompt = build_prompt(query, &a, &b, &opts.template)?;
            requests.push(PairRequest {
                query: query.clone(),
                a,
                b,
                prompt,
            });
        }
    }

    let mut existing: HashMap<String, Vec<AugTriple>> = HashMap::new();
    if let Some(path) = opts.output.as_deref().filter(|p| p.exists()) {
        for t in read_triples(path)? {
            if t.pos_item == t.neg_item
                || !split.catalog.is_cold_id(&t.pos_item)
                || !split.catalog.is_cold_id(&t.neg_item)
            {
                return Err(Error::Data(format!(
                    "{}: existing triple {}>{} is not a distinct cold pair",
                    path.display(),
                    t.pos_item,
                    t.neg_item
                )));
            }
            let key = t.prompt_digest.clone().unwrap_or_default();
            existing.entry(key).or_default().push(t);
        }
        existing.values_mut().for_each(|v| v.reverse());
    }

    let mut slots: Vec<Option<AugTriple>> = vec![None; requests.len()];
    let mut pending = Vec::new();
    let mut resumed = 0;
    for (k, req) in requests.iter().enumerate() {
        match existing.get_mut(&req.prompt.digest).and_then(Vec::pop) {
            Some(t) => {
                slots[k] = Some(t);
                resumed += 1;
            }
            None => pending.push(k),
        }
    }

    let source = oracle.source();
    let mut records = Vec::with_capacity(pending.len());
    let mut latencies = Vec::new();
    let mut abstains = 0;
    for chunk in pending.chunks(opts.chunk_size.max(1)) {
        let batch: Vec<PairRequest> = chunk.iter().map(|&k| requests[k].clone()).collect();
        let answers = oracle.prefer_batch(&batch);
        let mut new_triples = Vec::new();
        let mut new_records = Vec::new();
        for ((&k, req), answer) in chunk.iter().zip(&batch).zip(answers) {
            latencies.extend(answer.latency_ms);
            if let Some(note) = &answer.note {
                log::debug!("abstain for {}: {note}", req.query.user_id);
            }
            new_records.push(ReplayRecord {
                user: req.query.user_id.clone(),
                a: req.a.item_id.clone(),
                b: req.b.item_id.clone(),
                choice: answer.value,
                raw: answer.raw_response.clone(),
                source: Some(source),
            });
            let (pos, neg) = match answer.value {
                Choice::A => (&req.a, &req.b),
                Choice::B => (&req.b, &req.a),
                Choice::Abstain => {
                    abstains += 1;
                    continue;
                }
            };
            let t = AugTriple {
                user_id: req.query.user_id.clone(),
                pos_item: pos.item_id.clone(),
                neg_item: neg.item_id.clone(),
                source,
                prompt_digest: Some(req.prompt.digest.clone()),
            };
            new_triples.push(t.clone());
            slots[k] = Some(t);
        }
        if let Some(path) = &opts.output {
            append_lines(path, &new_triples)?;
        }
        if let Some(path) = &opts.record {
            append_lines(path, &new_records)?;
        }
        records.extend(new_records);
    }

    latencies.sort_unstable();
    let asked = pending.len();
    let abstain_rate = if asked == 0 {
        0.0
    } else {
        abstains as f64 / asked as f64
    };
    if abstain_rate > 0.5 {
        log::warn!(
            "oracle abstained on {abstains} of {asked} pairs ({:.1}%)",
            100.0 * abstain_rate
        );
    }
    let triples: Vec<AugTriple> = slots.into_iter().flatten().collect();
    let report = GenerationReport {
        queries: queries.len(),
        pairs: requests.len(),
        triples: triples.len(),
        abstains,
        abstain_rate,
        p50_latency_ms: nearest_rank(&latencies, 0.5),
        p99_latency_ms: nearest_rank(&latencies, 0.99),
        resumed,
        digests: requests.iter().map(|r| r.prompt.digest.clone()).collect(),
    };
    Ok(AugmentOutput {
        triples,
        records,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let xs: Vec<u64> = (1..=100).collect();
        assert_eq!(nearest_rank(&xs, 0.5), Some(50));
        assert_eq!(nearest_rank(&xs, 0.99), Some(99));
        assert_eq!(nearest_rank(&[7], 0.99), Some(7));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }
}
