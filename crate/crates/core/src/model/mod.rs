//! Latent-factor backbones: user/item representations and compatibility
//! scores `ŷ(u, i)`.

mod checkpoint;
pub mod neumf;
pub mod seqrec;
pub mod vectorizer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::Catalog;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFormat};
pub use neumf::NeuMfHead;
pub use seqrec::SeqRecBlock;
pub use vectorizer::{sparse_cosine, tokenize, BowVectorizer, SparseVec};

pub const EMBEDDING_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Mf,
    Neumf,
    Seqrec,
    ContentMf,
}

impl Backbone {
    pub fn tag(self) -> u8 {
        match self {
            Backbone::Mf => 0,
            Backbone::Neumf => 1,
            Backbone::Seqrec => 2,
            Backbone::ContentMf => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Backbone::Mf,
            1 => Backbone::Neumf,
            2 => Backbone::Seqrec,
            3 => Backbone::ContentMf,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Mf => "mf",
            Backbone::Neumf => "neumf",
            Backbone::Seqrec => "seqrec",
            Backbone::ContentMf => "content_mf",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Backbone::Mf),
            "neumf" => Ok(Backbone::Neumf),
            "seqrec" | "sasrec" => Ok(Backbone::Seqrec),
            "content_mf" | "content" => Ok(Backbone::ContentMf),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub dim: usize,
    /// Longest history the sequential encoder reads.
    pub max_len: usize,
    /// Vocabulary cap for content features.
    pub max_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Mf,
            dim: 16,
            max_len: 50,
            max_vocab: 5000,
        }
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub user_table: Option<Matrix>,
    pub item_table: Option<Matrix>,
    pub neumf: Option<NeuMfHead>,
    pub seqrec: Option<SeqRecBlock>,
    pub content_projection: Option<Matrix>,
}

impl Weights {
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = Vec::new();
        if let Some(t) = &self.user_table {
            out.push(("user_table", t));
        }
        if let Some(t) = &self.item_table {
            out.push(("item_table", t));
        }
        if let Some(h) = &self.neumf {
            out.extend(h.tensors());
        }
        if let Some(b) = &self.seqrec {
            out.extend(b.tensors());
        }
        if let Some(t) = &self.content_projection {
            out.push(("content_projection", t));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out = Vec::new();
        if let Some(t) = &mut self.user_table {
            out.push(("user_table", t));
        }
        if let Some(t) = &mut self.item_table {
            out.push(("item_table", t));
        }
        if let Some(h) = &mut self.neumf {
            out.extend(h.tensors_mut());
        }
        if let Some(b) = &mut self.seqrec {
            out.extend(b.tensors_mut());
        }
        if let Some(t) = &mut self.content_projection {
            out.push(("content_projection", t));
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha · other`; shapes must agree.
    pub fn add_scaled(&mut self, alpha: f64, other: &Weights) {
        let theirs = other.tensors();
        for ((_, mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            axpy(alpha, &t.data, &mut mine.data);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Flat view of scalar `index` across all tensors in order.
    pub fn scalar_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for (_, t) in self.tensors_mut() {
            if index < t.data.len() {
                return Some(&mut t.data[index]);
            }
            index -= t.data.len();
        }
        None
    }

    pub fn scalar(&self, mut index: usize) -> Option<f64> {
        for (_, t) in self.tensors() {
            if index < t.data.len() {
                return Some(t.data[index]);
            }
            index -= t.data.len();
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub backbone: Backbone,
    pub dim: usize,
    pub max_len: usize,
    pub rng_seed: u64,
    pub weights: Weights,
    /// Fixed TF-IDF features per item (content backbone only); `None` rows
    /// mark items without metadata.
    pub content_features: Option<Vec<Option<SparseVec>>>,
}

/// Everything a backbone may read to represent a user.
#[derive(Debug, Clone, Copy)]
pub struct UserCtx<'a> {
    pub user: usize,
    pub history: &'a [usize],
}

pub enum UserCache {
    Row(usize),
    Seq(seqrec::SeqCache),
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("valid std");
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    )
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    )
}

/// Initialize parameters for `n_users` users and every catalog item.
/// Embeddings are `Normal(0, 0.01²)`; dense layers are uniform in
/// `±1/√fan_in`; biases zero and normalization gains one.
pub fn init_params(
    config: &ModelConfig,
    n_users: usize,
    catalog: &Catalog,
    seed: u64,
) -> Result<ModelParams> {
    let dim = config.dim;
    if dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_items = catalog.len();
    let mut weights = Weights {
        user_table: None,
        item_table: None,
        neumf: None,
        seqrec: None,
        content_projection: None,
    };
    let mut content_features = None;

    if config.backbone != Backbone::Seqrec {
        weights.user_table = Some(normal_matrix(&mut rng, n_users, dim, EMBEDDING_STD));
    }
    if config.backbone != Backbone::ContentMf {
        weights.item_table = Some(normal_matrix(&mut rng, n_items, dim, EMBEDDING_STD));
    }
    match config.backbone {
        Backbone::Mf => {}
        Backbone::Neumf => {
            if dim < 2 {
                return Err(Error::Config(format!(
                    "neumf MLP needs dim >= 2 for its dim/2 layer, got {dim}"
                )));
            }
            let half = dim / 2;
            weights.neumf = Some(NeuMfHead {
                gmf: fan_in_uniform(&mut rng, dim, 1).reshaped(1, dim),
                w1: fan_in_uniform(&mut rng, 2 * dim, dim),
                b1: Matrix::zeros(1, dim),
                w2: fan_in_uniform(&mut rng, dim, half),
                b2: Matrix::zeros(1, half),
                w3: fan_in_uniform(&mut rng, half, 1),
                b3: Matrix::zeros(1, 1),
            });
        }
        Backbone::Seqrec => {
            if config.max_len == 0 {
                return Err(Error::Config("seqrec max_len must be positive".into()));
            }
            let mut block = SeqRecBlock::zeros(config.max_len, dim);
            block.pos = normal_matrix(&mut rng, config.max_len, dim, EMBEDDING_STD);
            for m in [
                &mut block.wq,
                &mut block.wk,
                &mut block.wv,
                &mut block.wo,
                &mut block.ff_w1,
                &mut block.ff_w2,
            ] {
                *m = fan_in_uniform(&mut rng, dim, dim);
            }
            block.ln1_g.fill(1.0);
            block.ln2_g.fill(1.0);
            block.lnf_g.fill(1.0);
            weights.seqrec = Some(block);
        }
        Backbone::ContentMf => {
            let metas: Vec<_> = catalog.meta.values().cloned().collect();
            let vectorizer = BowVectorizer::build(&metas, config.max_vocab)?;
            weights.content_projection = Some(normal_matrix(
                &mut rng,
                vectorizer.len(),
                dim,
                EMBEDDING_STD,
            ));
            content_features = Some(
                catalog
                    .ids()
                    .iter()
                    .map(|id| catalog.meta_of(id).map(|m| vectorizer.transform(&m.text())))
                    .collect(),
            );
        }
    }
    Ok(ModelParams {
        backbone: config.backbone,
        dim,
        max_len: config.max_len,
        rng_seed: seed,
        weights,
        content_features,
    })
}

impl ModelParams {
    pub fn n_items(&self) -> usize {
        match (&self.weights.item_table, &self.content_features) {
            (Some(t), _) => t.rows,
            (None, Some(f)) => f.len(),
            _ => 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.weights.user_table.as_ref().map_or(0, |t| t.rows)
    }

    pub fn user_forward(&self, ctx: UserCtx<'_>) -> Result<(Vec<f64>, UserCache)> {
        match self.backbone {
            Backbone::Seqrec => {
                if ctx.history.is_empty() {
                    return Err(Error::Data(
                        "sequential encoder needs a non-empty history".into(),
                    ));
                }
                let block = self.weights.seqrec.as_ref().expect("seqrec weights");
                let table = self.weights.item_table.as_ref().expect("item table");
                let items = seqrec::window(ctx.history, self.max_len);
                if let Some(&bad) = items.iter().find(|&&i| i >= table.rows) {
                    return Err(Error::OutOfVocabulary {
                        kind: "item",
                        id: bad.to_string(),
                    });
                }
                let cache = seqrec::forward(block, table, items);
                let out = cache.out.last().expect("non-empty").clone();
                Ok((out, UserCache::Seq(cache)))
            }
            _ => {
                let table = self.weights.user_table.as_ref().expect("user table");
                if ctx.user >= table.rows {
                    return Err(Error::OutOfVocabulary {
                        kind: "user",
                        id: ctx.user.to_string(),
                    });
                }
                Ok((table.row(ctx.user).to_vec(), UserCache::Row(ctx.user)))
            }
        }
    }

    pub fn user_repr(&self, ctx: UserCtx<'_>) -> Result<Vec<f64>> {
        self.user_forward(ctx).map(|(v, _)| v)
    }

    pub fn user_backward(&self, cache: &UserCache, d_repr: &[f64], grad: &mut Weights) {
        match cache {
            UserCache::Row(u) => {
                let g = grad.user_table.as_mut().expect("user table grad");
                axpy(1.0, d_repr, g.row_mut(*u));
            }
            UserCache::Seq(c) => {
                let block = self.weights.seqrec.as_ref().expect("seqrec weights");
                let Weights {
                    item_table, seqrec, ..
                } = grad;
                seqrec::backward(
                    block,
                    c,
                    d_repr,
                    seqrec.as_mut().expect("seqrec grad"),
                    item_table.as_mut().expect("item table grad"),
                );
            }
        }
    }

    pub fn item_repr(&self, item: usize) -> Result<Vec<f64>> {
        if item >= self.n_items() {
            return Err(Error::OutOfVocabulary {
                kind: "item",
                id: item.to_string(),
            });
        }
        match &self.weights.item_table {
            Some(t) => Ok(t.row(item).to_vec()),
            None => {
                let features = self.content_features.as_ref().expect("content features")[item]
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("item {item} has no content metadata")))?;
                let proj = self
                    .weights
                    .content_projection
                    .as_ref()
                    .expect("projection");
                let mut out = vec![0.0; self.dim];
                for &(t, w) in features {
                    axpy(w, proj.row(t as usize), &mut out);
                }
                Ok(out)
            }
        }
    }

    pub fn item_backward(&self, item: usize, d_repr: &[f64], grad: &mut Weights) {
        match &mut grad.item_table {
            Some(g) => axpy(1.0, d_repr, g.row_mut(item)),
            None => {
                let g = grad.content_projection.as_mut().expect("projection grad");
                if let Some(features) = &self.content_features.as_ref().expect("features")[item] {
                    for &(t, w) in features {
                        axpy(w, d_repr, g.row_mut(t as usize));
                    }
                }
            }
        }
    }

    /// `ŷ(u, i)`: a dot product, or the NeuMF head.
    #[inline]
    pub fn score_unchecked(&self, u: &[f64], i: &[f64]) -> f64 {
        match &self.weights.neumf {
            Some(head) => head.score(u, i),
            None => dot(u, i),
        }
    }

    pub fn score(&self, u: &[f64], i: &[f64]) -> Result<f64> {
        if u.len() != self.dim || i.len() != self.dim {
            return Err(Error::Data(format!(
                "representation length {}/{} does not match dim {}",
                u.len(),
                i.len(),
                self.dim
            )));
        }
        if !u.iter().chain(i).all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite representation".into()));
        }
        Ok(self.score_unchecked(u, i))
    }

    /// Accumulate `d_score · ∂ŷ/∂(u, i, head)`.
    pub fn score_backward(
        &self,
        u: &[f64],
        i: &[f64],
        d_score: f64,
        grad: &mut Weights,
        du: &mut [f64],
        di: &mut [f64],
    ) {
        match &self.weights.neumf {
            Some(head) => head.backward(
                u,
                i,
                d_score,
                grad.neumf.as_mut().expect("head grad"),
                du,
                di,
            ),
            None => {
                axpy(d_score, i, du);
                axpy(d_score, u, di);
            }
        }
    }

    /// Representations of every item, row `i` for dense index `i`.
    pub fn item_matrix(&self) -> Result<Matrix> {
        if let Some(t) = &self.weights.item_table {
            return Ok(t.clone());
        }
        let n = self.n_items();
        let mut m = Matrix::zeros(n, self.dim);
        for i in 0..n {
            m.row_mut(i).copy_from_slice(&self.item_repr(i)?);
        }
        Ok(m)
    }

    /// Scores against every catalog item, in dense-index order.
    pub fn score_all(&self, u: &[f64], items: &Matrix) -> Vec<f64> {
        (0..items.rows)
            .map(|i| self.score_unchecked(u, items.row(i)))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite()
    }
}
