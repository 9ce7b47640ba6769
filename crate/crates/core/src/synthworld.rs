//! Synthetic latent-factor worlds with known user/item affinities.
//!
//! Users and items get i.i.d. standard-normal vectors. Each user's train
//! events are drawn without replacement from `softmax(affinity / T)` over
//! warm items; test events are drawn the same way over every item the user
//! has not already bought. Timestamps are laid out so the 7:3 single-point
//! split recovers exactly the intended warm/cold partition.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_interactions, load_item_meta, write_interactions_tsv, write_item_meta, EvalQuery,
    Interaction, InteractionFormat, ItemMeta,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

const TRUTH_MAGIC: &[u8; 8] = b"CAUGTRTH";
const MAX_REGENERATIONS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub n_users: usize,
    pub n_warm: usize,
    pub n_cold: usize,
    pub true_dim: usize,
    pub interactions_per_user: usize,
    pub temperature: f64,
    pub seed: u64,
    pub title_tokens_per_item: usize,
    pub train_fraction: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_users: 500,
            n_warm: 1700,
            n_cold: 300,
            true_dim: 8,
            interactions_per_user: 30,
            temperature: 0.5,
            seed: 0,
            title_tokens_per_item: 3,
            train_fraction: 0.7,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users == 0 || self.n_warm == 0 || self.true_dim == 0 {
            return bad("world counts must be positive".into());
        }
        if self.n_cold < 2 {
            return bad(format!(
                "world needs at least 2 cold items, got {}",
                self.n_cold
            ));
        }
        if self.interactions_per_user < 2 {
            return bad("interactions_per_user must be at least 2".into());
        }
        if self.interactions_per_user > self.n_warm {
            return bad(format!(
                "interactions_per_user {} exceeds warm item count {}",
                self.interactions_per_user, self.n_warm
            ));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_warm + self.n_cold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub true_user_vectors: Matrix,
    /// Warm items occupy rows `0..n_warm`, cold items the rest.
    pub true_item_vectors: Matrix,
    pub interactions: Vec<Interaction>,
    pub metas: Vec<ItemMeta>,
    /// Worlds discarded because the cold ceiling failed the sanity check.
    pub regenerations: u32,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i:05}")
}

fn parse_index(id: &str, prefix: char) -> Option<usize> {
    id.strip_prefix(prefix)?.parse().ok()
}

/// Draw `k` distinct indices from `softmax(logits)` sequentially without
/// replacement, in draw order (Gumbel top-k).
fn gumbel_top_k(rng: &mut ChaCha8Rng, logits: &[(usize, f64)], k: usize) -> Vec<usize> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let mut keyed: Vec<(f64, usize)> = logits
        .iter()
        .map(|&(i, l)| (l + gumbel.sample(rng), i))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Smallest event count `c` with `c / total >= fraction`.
fn train_event_count(total: usize, fraction: f64) -> usize {
    let mut c = (fraction * total as f64).ceil() as usize;
    while c > 0 && (c - 1) as f64 / total as f64 >= fraction {
        c -= 1;
    }
    while (c as f64) / (total as f64) < fraction {
        c += 1;
    }
    c
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    for attempt in 0..=MAX_REGENERATIONS {
        let world = generate_attempt(spec, attempt)?;
        let k = 50.min(spec.n_items());
        let baseline = k as f64 / spec.n_items() as f64;
        let cold_ceiling = world.bayes_recall_group(k, true);
        if spec.temperature > 1.0
            || k == spec.n_items()
            || cold_ceiling.is_none_or(|r| r > baseline)
        {
            return Ok(world);
        }
        log::warn!(
            "world attempt {attempt}: cold Bayes recall@{k} {cold_ceiling:?} not above {baseline}; regenerating"
        );
    }
    Err(Error::Data(format!(
        "no world beat the uniform cold baseline after {MAX_REGENERATIONS} regenerations"
    )))
}

fn generate_attempt(spec: &WorldSpec, attempt: u32) -> Result<World> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(attempt as u64 * 0x9e37_79b9));
    let d = spec.true_dim;
    let n_items = spec.n_items();
    let normal = |rng: &mut ChaCha8Rng, n: usize| -> Matrix {
        Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| StandardNormal.sample(rng)).collect(),
        )
    };
    let users = normal(&mut rng, spec.n_users);
    let items = normal(&mut rng, n_items);
    let affinity = |u: usize, i: usize| dot(users.row(u), items.row(i));

    let total = spec.n_users * spec.interactions_per_user;
    let n_train = train_event_count(total, spec.train_fraction);
    if n_train >= total {
        return Err(Error::Config("train fraction leaves no test events".into()));
    }
    let base = n_train / spec.n_users;
    let extra = n_train % spec.n_users;
    if base == 0 || base + (extra > 0) as usize > spec.interactions_per_user {
        return Err(Error::Config(format!(
            "cannot give every user train history with {} events per user",
            spec.interactions_per_user
        )));
    }

    let inv_t = 1.0 / spec.temperature;
    let mut train: Vec<Vec<usize>> = Vec::with_capacity(spec.n_users);
    let mut test: Vec<Vec<usize>> = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let n_tr = base + (u < extra) as usize;
        let warm_logits: Vec<(usize, f64)> = (0..spec.n_warm)
            .map(|i| (i, affinity(u, i) * inv_t))
            .collect();
        let bought = gumbel_top_k(&mut rng, &warm_logits, n_tr);
        let mut owned = vec![false; n_items];
        bought.iter().for_each(|&i| owned[i] = true);
        let rest: Vec<(usize, f64)> = (0..n_items)
            .filter(|&i| !owned[i])
            .map(|i| (i, affinity(u, i) * inv_t))
            .collect();
        test.push(gumbel_top_k(
            &mut rng,
            &rest,
            spec.interactions_per_user - n_tr,
        ));
        train.push(bought);
    }

    cover_warm_items(spec, &mut train, &test, &affinity)?;
    cover_cold_items(spec, &train, &mut test, &affinity)?;

    // Round-robin timestamps: train events occupy [0, n_train), test events
    // follow, so the split point is exactly n_train.
    let mut interactions = Vec::with_capacity(total);
    let mut ts = 0i64;
    for phase in [&train, &test] {
        let longest = phase.iter().map(Vec::len).max().unwrap_or(0);
        for pos in 0..longest {
            for (u, seq) in phase.iter().enumerate() {
                if let Some(&i) = seq.get(pos) {
                    interactions.push(Interaction::new(user_id(u), item_id(i), ts));
                    ts += 1;
                }
            }
        }
    }

    let metas = (0..n_items)
        .map(|i| item_meta(i, items.row(i), spec.title_tokens_per_item))
        .collect();
    Ok(World {
        spec: spec.clone(),
        true_user_vectors: users,
        true_item_vectors: items,
        interactions,
        metas,
        regenerations: attempt,
    })
}

fn item_meta(i: usize, v: &[f64], n_tokens: usize) -> ItemMeta {
    let mut dims: Vec<usize> = (0..v.len()).collect();
    dims.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    let token =
        |prefix: &str, j: usize| format!("{prefix}{j}{}", if v[j] >= 0.0 { "p" } else { "n" });
    ItemMeta {
        item_id: item_id(i),
        title: dims
            .iter()
            .take(n_tokens.max(1))
            .map(|&j| token("f", j))
            .collect::<Vec<_>>()
            .join(" "),
        categories: vec![token("c", dims[0])],
    }
}

/// Give every warm item at least one train event by swapping it into the
/// history of its highest-affinity user, replacing that user's
/// least-preferred item that is bought elsewhere too.
fn cover_warm_items(
    spec: &WorldSpec,
    train: &mut [Vec<usize>],
    test: &[Vec<usize>],
    affinity: &impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let mut counts = vec![0usize; spec.n_warm];
    train.iter().flatten().for_each(|&i| counts[i] += 1);
    let mut pinned = vec![false; spec.n_warm];
    for w in 0..spec.n_warm {
        if counts[w] > 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..spec.n_users).collect();
        order.sort_by(|&a, &b| affinity(b, w).total_cmp(&affinity(a, w)).then(a.cmp(&b)));
        let slot = order.into_iter().find_map(|u| {
            if train[u].contains(&w) || test[u].contains(&w) {
                return None;
            }
            (0..train[u].len())
                .filter(|&p| counts[train[u][p]] >= 2 && !pinned[train[u][p]])
                .min_by(|&a, &b| affinity(u, train[u][a]).total_cmp(&affinity(u, train[u][b])))
                .map(|p| (u, p))
        });
        let (u, p) = slot.ok_or_else(|| Error::Data(format!("cannot place warm item {w}")))?;
        counts[train[u][p]] -= 1;
        train[u][p] = w;
        counts[w] = 1;
        pinned[w] = true;
    }
    Ok(())
}

/// Give every cold item at least one test event, replacing the
/// highest-affinity user's least-preferred warm test item.
fn cover_cold_items(
    spec: &WorldSpec,
    train: &[Vec<usize>],
    test: &mut [Vec<usize>],
    affinity: &impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let n_items = spec.n_items();
    let mut seen = vec![false; n_items];
    test.iter().flatten().for_each(|&i| seen[i] = true);
    for c in spec.n_warm..n_items {
        if seen[c] {
            continue;
        }
        let mut order: Vec<usize> = (0..spec.n_users).collect();
        order.sort_by(|&a, &b| affinity(b, c).total_cmp(&affinity(a, c)).then(a.cmp(&b)));
        let slot = order.into_iter().find_map(|u| {
            if train[u].contains(&c) || test[u].contains(&c) {
                return None;
            }
            (0..test[u].len())
                .filter(|&p| test[u][p] < spec.n_warm)
                .min_by(|&a, &b| affinity(u, test[u][a]).total_cmp(&affinity(u, test[u][b])))
                .map(|p| (u, p))
        });
        let (u, p) = slot.ok_or_else(|| Error::Data(format!("cannot place cold item {c}")))?;
        test[u][p] = c;
        seen[c] = true;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruePreference {
    A,
    B,
    Tie,
}

impl World {
    pub fn n_items(&self) -> usize {
        self.true_item_vectors.rows
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        parse_index(id, 'u').filter(|&u| u < self.true_user_vectors.rows)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        parse_index(id, 'i').filter(|&i| i < self.n_items())
    }

    pub fn is_cold(&self, item: usize) -> bool {
        item >= self.spec.n_warm
    }

    pub fn true_affinity(&self, user: usize, item: usize) -> f64 {
        dot(
            self.true_user_vectors.row(user),
            self.true_item_vectors.row(item),
        )
    }

    /// A iff `affinity(u, a) > affinity(u, b)`; exact ties are `Tie`.
    pub fn prefer(&self, user: usize, a: usize, b: usize) -> TruePreference {
        let (sa, sb) = (self.true_affinity(user, a), self.true_affinity(user, b));
        if sa > sb {
            TruePreference::A
        } else if sb > sa {
            TruePreference::B
        } else {
            TruePreference::Tie
        }
    }

    /// Rank of `truth` when every item is ordered by true affinity
    /// (descending, ties by index).
    fn true_rank(&self, user: usize, truth: usize) -> usize {
        let target = self.true_affinity(user, truth);
        (0..self.n_items())
            .filter(|&i| {
                let s = self.true_affinity(user, i);
                s > target || (s == target && i < truth)
            })
            .count()
    }

    /// Recall@K of the ranking by true affinities: the ceiling for any
    /// trained model on these queries. `None` when there are no queries.
    pub fn bayes_recall(&self, queries: &[EvalQuery], k: usize) -> Result<Option<f64>> {
        if queries.is_empty() {
            return Ok(None);
        }
        let mut hits = 0usize;
        for q in queries {
            let u = self
                .user_index(&q.user_id)
                .ok_or_else(|| Error::OutOfVocabulary {
                    kind: "user",
                    id: q.user_id.clone(),
                })?;
            let i = self
                .item_index(&q.truth_item)
                .ok_or_else(|| Error::OutOfVocabulary {
                    kind: "item",
                    id: q.truth_item.clone(),
                })?;
            hits += (self.true_rank(u, i) < k) as usize;
        }
        Ok(Some(hits as f64 / queries.len() as f64))
    }

    fn bayes_recall_group(&self, k: usize, cold: bool) -> Option<f64> {
        let split_ts = train_event_count(self.interactions.len(), self.spec.train_fraction) as i64;
        let (mut hits, mut n) = (0usize, 0usize);
        for x in self.interactions.iter().filter(|x| x.timestamp >= split_ts) {
            let (u, i) = (self.user_index(&x.user_id)?, self.item_index(&x.item_id)?);
            if self.is_cold(i) == cold {
                hits += (self.true_rank(u, i) < k) as usize;
                n += 1;
            }
        }
        (n > 0).then(|| hits as f64 / n as f64)
    }

    /// Writes `interactions.tsv`, `items.jsonl`, `truth.bin` and `world.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_interactions_tsv(&dir.join("interactions.tsv"), &self.interactions)?;
        write_item_meta(&dir.join("items.jsonl"), &self.metas)?;
        let mut truth = Vec::new();
        truth.extend_from_slice(TRUTH_MAGIC);
        for m in [&self.true_user_vectors, &self.true_item_vectors] {
            truth.extend_from_slice(&(m.rows as u64).to_le_bytes());
            truth.extend_from_slice(&(m.cols as u64).to_le_bytes());
            m.data
                .iter()
                .for_each(|v| truth.extend_from_slice(&v.to_le_bytes()));
        }
        let path = dir.join("truth.bin");
        fs::write(&path, truth).map_err(|e| Error::io(&path, e))?;
        let header = serde_json::json!({ "spec": self.spec, "regenerations": self.regenerations });
        let path = dir.join("world.json");
        fs::write(&path, serde_json::to_string_pretty(&header)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<World> {
        let path = dir.join("world.json");
        let header: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        let spec: WorldSpec = serde_json::from_value(header["spec"].clone())?;
        let regenerations = header["regenerations"].as_u64().unwrap_or(0) as u32;
        let (interactions, _) =
            load_interactions(&dir.join("interactions.tsv"), InteractionFormat::Tsv)?;
        let metas = load_item_meta(&dir.join("items.jsonl"))?;

        let path = dir.join("truth.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let bad = || Error::Data(format!("{}: malformed truth file", path.display()));
        if bytes.len() < 8 || &bytes[..8] != TRUTH_MAGIC {
            return Err(bad());
        }
        let mut pos = 8;
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            let b = bytes.get(*pos..*pos + 8).ok_or_else(bad)?;
            *pos += 8;
            Ok(u64::from_le_bytes(b.try_into().unwrap()))
        };
        let mut mats = Vec::new();
        for _ in 0..2 {
            let rows = read_u64(&mut pos)? as usize;
            let cols = read_u64(&mut pos)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_bits(read_u64(&mut pos)?));
            }
            mats.push(Matrix::from_vec(rows, cols, data));
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        let true_item_vectors = mats.pop().unwrap();
        let true_user_vectors = mats.pop().unwrap();
        Ok(World {
            spec,
            true_user_vectors,
            true_item_vectors,
            interactions,
            metas,
            regenerations,
        })
    }
}
