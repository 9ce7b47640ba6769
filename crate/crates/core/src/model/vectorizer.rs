//! Bag-of-words TF-IDF features over item titles and categories.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::datasets::ItemMeta;
use crate::error::{Error, Result};

/// Sparse vector as `(index, weight)` pairs sorted by index.
pub type SparseVec = Vec<(u32, f64)>;

/// Lowercase tokens split on non-alphanumeric boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowVectorizer {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
}

impl BowVectorizer {
    /// Keeps the `max_vocab` tokens with the highest total count (ties
    /// broken lexicographically); `idf(t) = max(0, ln(n / (1 + df(t))))`.
    pub fn build(metas: &[ItemMeta], max_vocab: usize) -> Result<Self> {
        if metas.is_empty() {
            return Err(Error::Data(
                "cannot build a vocabulary from no items".into(),
            ));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for m in metas {
            let tokens = tokenize(&m.text());
            let mut seen = std::collections::HashSet::new();
            for t in tokens {
                if seen.insert(t.clone()) {
                    *doc_freq.entry(t.clone()).or_default() += 1;
                }
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_vocab);
        if ranked.is_empty() {
            return Err(Error::Data("empty vocabulary after filtering".into()));
        }
        let n = metas.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(ranked.len());
        let mut dfs = Vec::with_capacity(ranked.len());
        for (i, (token, _)) in ranked.into_iter().enumerate() {
            let df = doc_freq[&token];
            idf.push((n / (1.0 + df as f64)).ln().max(0.0));
            dfs.push(df);
            vocabulary.insert(token, i);
        }
        Ok(BowVectorizer {
            vocabulary,
            idf,
            doc_freq: dfs,
            n_docs: metas.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn doc_freq_of(&self, token: &str) -> Option<usize> {
        self.vocabulary.get(token).map(|&i| self.doc_freq[i])
    }

    /// L2-normalized TF-IDF vector of `text`; all-zero texts give an empty
    /// vector.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&t) {
                *tf.entry(i as u32).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = tf
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i as usize]))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        v
    }
}

/// Cosine of two L2-normalized sparse vectors (0 when either is empty).
pub fn sparse_cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}
