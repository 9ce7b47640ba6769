//! Interaction data, the single-time-point split and the warm/cold item
//! partition.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_interactions, load_item_meta, load_split, save_split, write_interactions_tsv,
    write_item_meta, InteractionFormat, LoadReport, SplitSummary,
};

/// One (user, item, timestamp, rating) event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub rating: Option<f64>,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: i64) -> Self {
        Interaction {
            user_id: user.into(),
            item_id: item.into(),
            timestamp,
            rating: None,
        }
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if self.user_id.is_empty() || self.item_id.is_empty() {
            return Err("empty user or item id".into());
        }
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        if let Some(r) = self.rating {
            if !(1.0..=5.0).contains(&r) {
                return Err(format!("rating {r} outside [1, 5]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    #[serde(rename = "item")]
    pub item_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl ItemMeta {
    /// Title, or the joined categories when the title is empty.
    pub fn display_title(&self) -> String {
        if self.title.trim().is_empty() {
            self.categories.join(" / ")
        } else {
            self.title.clone()
        }
    }

    /// `title (cat1, cat2)`
    pub fn describe(&self) -> String {
        if self.categories.is_empty() {
            self.display_title()
        } else {
            format!("{} ({})", self.display_title(), self.categories.join(", "))
        }
    }

    /// Title and categories as a single text for bag-of-words features.
    pub fn text(&self) -> String {
        let mut s = self.title.clone();
        for c in &self.categories {
            s.push(' ');
            s.push_str(c);
        }
        s
    }
}

/// The item universe with its warm/cold partition. Dense indices follow
/// lexicographic item id order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub items: BTreeMap<String, usize>,
    pub warm_ids: BTreeSet<String>,
    pub cold_ids: BTreeSet<String>,
    pub meta: BTreeMap<String, ItemMeta>,
    #[serde(skip)]
    ids: Vec<String>,
    #[serde(skip)]
    cold_mask: Vec<bool>,
}

impl Catalog {
    pub fn new(warm_ids: BTreeSet<String>, cold_ids: BTreeSet<String>) -> Self {
        let mut all: BTreeSet<String> = warm_ids.clone();
        all.extend(cold_ids.iter().cloned());
        let items = all.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut catalog = Catalog {
            items,
            warm_ids,
            cold_ids,
            meta: BTreeMap::new(),
            ids: Vec::new(),
            cold_mask: Vec::new(),
        };
        catalog.reindex();
        catalog
    }

    fn reindex(&mut self) {
        self.ids = vec![String::new(); self.items.len()];
        self.cold_mask = vec![false; self.items.len()];
        for (id, &idx) in &self.items {
            self.ids[idx] = id.clone();
            self.cold_mask[idx] = self.cold_ids.contains(id);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, item: &str) -> Option<usize> {
        self.items.get(item).copied()
    }

    pub fn require(&self, item: &str) -> Result<usize> {
        self.index_of(item).ok_or_else(|| Error::OutOfVocabulary {
            kind: "item",
            id: item.to_string(),
        })
    }

    pub fn id_of(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_cold(&self, index: usize) -> bool {
        self.cold_mask[index]
    }

    pub fn is_cold_id(&self, item: &str) -> bool {
        self.cold_ids.contains(item)
    }

    /// Cold item ids in dense-index order.
    pub fn cold_list(&self) -> Vec<String> {
        self.cold_ids.iter().cloned().collect()
    }

    /// Attach metadata for catalog items; metadata for unknown items is ignored.
    pub fn attach_meta(&mut self, metas: impl IntoIterator<Item = ItemMeta>) {
        for m in metas {
            if self.items.contains_key(&m.item_id) {
                self.meta.insert(m.item_id.clone(), m);
            }
        }
    }

    pub fn meta_of(&self, item: &str) -> Option<&ItemMeta> {
        self.meta.get(item)
    }

    /// Rebuild the derived lookup tables after deserialization.
    pub(crate) fn restore(mut self) -> Self {
        self.reindex();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub split_time: i64,
    pub train_fraction: f64,
    pub catalog: Catalog,
    pub users: BTreeMap<String, usize>,
}

impl SplitDataset {
    pub fn user_index(&self, user: &str) -> Result<usize> {
        self.users
            .get(user)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary {
                kind: "user",
                id: user.to_string(),
            })
    }

    /// Each user's train items ordered by (timestamp, item_id).
    pub fn train_histories(&self) -> BTreeMap<String, Vec<String>> {
        let mut by_user: BTreeMap<&str, Vec<(i64, &str)>> = BTreeMap::new();
        for x in &self.train {
            by_user
                .entry(&x.user_id)
                .or_default()
                .push((x.timestamp, &x.item_id));
        }
        by_user
            .into_iter()
            .map(|(u, mut events)| {
                events.sort();
                (
                    u.to_string(),
                    events.into_iter().map(|(_, i)| i.to_string()).collect(),
                )
            })
            .collect()
    }

    /// Number of train interactions per item, indexed densely.
    pub fn train_item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.catalog.len()];
        for x in &self.train {
            if let Some(i) = self.catalog.index_of(&x.item_id) {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// One test interaction whose user has train history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub user_id: String,
    pub history: Vec<String>,
    pub truth_item: String,
    pub is_cold: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueryReport {
    pub queries: usize,
    pub skipped_users: usize,
    pub skipped_interactions: usize,
}

/// Items seen in train are warm; items seen only in test are cold.
pub fn partition_cold_warm(
    train: &[Interaction],
    test: &[Interaction],
) -> (BTreeSet<String>, BTreeSet<String>) {
    let warm: BTreeSet<String> = train.iter().map(|x| x.item_id.clone()).collect();
    let cold = test
        .iter()
        .filter(|x| !warm.contains(&x.item_id))
        .map(|x| x.item_id.clone())
        .collect();
    (warm, cold)
}

/// Smallest distinct timestamp `t` with `|{ts < t}| / n >= train_fraction`.
pub fn find_split_time(interactions: &[Interaction], train_fraction: f64) -> Result<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for x in interactions {
        *counts.entry(x.timestamp).or_default() += 1;
    }
    let n = interactions.len() as f64;
    let mut before = 0usize;
    for (&t, &c) in &counts {
        if before > 0 && before as f64 / n >= train_fraction {
            return Ok(t);
        }
        before += c;
    }
    Err(Error::Data(format!(
        "no split point reaches train fraction {train_fraction} over {} distinct timestamps",
        counts.len()
    )))
}

pub fn temporal_split(interactions: &[Interaction], train_fraction: f64) -> Result<SplitDataset> {
    if interactions.is_empty() {
        return Err(Error::Data("cannot split an empty interaction list".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let split_time = find_split_time(interactions, train_fraction)?;
    let (train, test): (Vec<_>, Vec<_>) = interactions
        .iter()
        .cloned()
        .partition(|x| x.timestamp < split_time);
    let (warm, cold) = partition_cold_warm(&train, &test);
    let catalog = Catalog::new(warm, cold);
    let users = interactions
        .iter()
        .map(|x| x.user_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, u)| (u.to_string(), i))
        .collect();
    Ok(SplitDataset {
        train,
        test,
        split_time,
        train_fraction,
        catalog,
        users,
    })
}

pub fn build_eval_queries(split: &SplitDataset) -> (Vec<EvalQuery>, QueryReport) {
    let histories = split.train_histories();
    let mut report = QueryReport::default();
    let mut skipped: BTreeSet<&str> = BTreeSet::new();
    let mut queries = Vec::new();
    for x in &split.test {
        match histories.get(&x.user_id) {
            Some(history) => queries.push(EvalQuery {
                user_id: x.user_id.clone(),
                history: history.clone(),
                truth_item: x.item_id.clone(),
                is_cold: split.catalog.is_cold_id(&x.item_id),
            }),
            None => {
                skipped.insert(&x.user_id);
                report.skipped_interactions += 1;
            }
        }
    }
    report.queries = queries.len();
    report.skipped_users = skipped.len();
    if report.skipped_users > 0 {
        log::info!(
            "skipped {} test interactions from {} users without train history",
            report.skipped_interactions,
            report.skipped_users
        );
    }
    (queries, report)
}

/// Dense-index form of the train interactions used by training and
/// augmentation.
#[derive(Debug, Clone)]
pub struct IndexedHistories {
    /// Per user (dense index), train items in (timestamp, item_id) order.
    pub by_user: Vec<Vec<usize>>,
}

impl IndexedHistories {
    pub fn build(split: &SplitDataset) -> Self {
        let mut by_user = vec![Vec::new(); split.users.len()];
        let lookup: HashMap<&str, usize> = split
            .catalog
            .items
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .collect();
        for (user, items) in split.train_histories() {
            let u = split.users[&user];
            by_user[u] = items.iter().map(|i| lookup[i.as_str()]).collect();
        }
        IndexedHistories { by_user }
    }
}
