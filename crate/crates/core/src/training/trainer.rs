use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{total_loss, Example, LossOptions, TripleRef};
use super::{AugTriple, LossReport, Optimizer, TrainConfig};
use crate::datasets::{IndexedHistories, SplitDataset};
use crate::error::{Error, Result};
use crate::model::{Backbone, ModelParams, UserCtx};

/// Train interactions and augmentation triples resolved to dense indices.
#[derive(Debug, Clone)]
pub struct TrainingData {
    histories: Vec<Vec<usize>>,
    /// `(user, position in that user's history)`
    examples: Vec<(usize, usize)>,
    /// `(user, pos, neg)`
    triples: Vec<(usize, usize, usize)>,
    log_q: Vec<f64>,
}

impl TrainingData {
    pub fn build(split: &SplitDataset, triples: &[AugTriple], backbone: Backbone) -> Result<Self> {
        let histories = IndexedHistories::build(split).by_user;
        // the sequential encoder needs at least one prior item
        let first = if backbone == Backbone::Seqrec { 1 } else { 0 };
        let examples = histories
            .iter()
            .enumerate()
            .flat_map(|(u, h)| (first..h.len()).map(move |p| (u, p)))
            .collect();

        let catalog = &split.catalog;
        let mut resolved = Vec::with_capacity(triples.len());
        for t in triples {
            let u = split.user_index(&t.user_id)?;
            if histories[u].is_empty() {
                return Err(Error::Data(format!(
                    "triple user `{}` has no train history",
                    t.user_id
                )));
            }
            if t.pos_item == t.neg_item {
                return Err(Error::Data(format!(
                    "triple with pos == neg `{}`",
                    t.pos_item
                )));
            }
            for item in [&t.pos_item, &t.neg_item] {
                if !catalog.is_cold_id(item) {
                    return Err(Error::Data(format!("triple item `{item}` is not cold")));
                }
            }
            resolved.push((
                u,
                catalog.require(&t.pos_item)?,
                catalog.require(&t.neg_item)?,
            ));
        }

        let counts = split.train_item_counts();
        let total: u64 = counts.iter().sum();
        let log_q = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    (c as f64 / total as f64).ln()
                }
            })
            .collect();
        Ok(TrainingData {
            histories,
            examples,
            triples: resolved,
            log_q,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    fn example(&self, (u, p): (usize, usize)) -> Example<'_> {
        let h = &self.histories[u];
        Example {
            ctx: UserCtx {
                user: u,
                history: &h[..p],
            },
            item: h[p],
        }
    }

    fn triple(&self, (u, pos, neg): (usize, usize, usize)) -> TripleRef<'_> {
        TripleRef {
            ctx: UserCtx {
                user: u,
                history: &self.histories[u],
            },
            pos,
            neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub main_loss: f64,
    pub aug_loss: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// One optimizer update on `main + λ·aug`.
pub fn train_step(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    batch: &[Example<'_>],
    triples: &[TripleRef<'_>],
    opts: &LossOptions<'_>,
) -> Result<LossReport> {
    let mut grad = params.weights.zeros_like();
    let report = total_loss(params, batch, triples, opts, Some(&mut grad))?;
    optimizer.apply(&mut params.weights, &grad);
    Ok(report)
}

/// Mini-batch training. Each main mini-batch is paired with the next
/// `batch_size` triples from the augmentation pool, which is cycled and
/// reshuffled on every wrap. Deterministic for a given seed.
pub fn train(
    initial: &ModelParams,
    data: &TrainingData,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = initial.clone();
    let mut log = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(TrainOutcome { params, log });
    }
    if data.examples.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 training examples, found {}",
            data.examples.len()
        )));
    }

    // The triple pool shuffles on its own stream so the main batches do not
    // depend on whether triples are present.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(1);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut opts = config.loss_options();
    if config.logq_correction {
        opts.log_q = Some(&data.log_q);
    }

    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut aug_order: Vec<usize> = (0..data.triples.len()).collect();
    aug_order.shuffle(&mut aug_rng);
    let mut aug_cursor = 0usize;
    let mut initial_total: Option<f64> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = LossReport::default();
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<Example<'_>> = chunk
                .iter()
                .map(|&k| data.example(data.examples[k]))
                .collect();

            let mut triples = Vec::new();
            if !aug_order.is_empty() {
                for _ in 0..config.batch_size.min(aug_order.len()) {
                    if aug_cursor == aug_order.len() {
                        aug_order.shuffle(&mut aug_rng);
                        aug_cursor = 0;
                    }
                    triples.push(data.triple(data.triples[aug_order[aug_cursor]]));
                    aug_cursor += 1;
                }
            }

            let report =
                train_step(&mut params, &mut optimizer, &batch, &triples, &opts).map_err(|e| {
                    match e {
                        Error::Numerical(msg) => {
                            Error::Numerical(format!("epoch {epoch}, step {steps}: {msg}"))
                        }
                        other => other,
                    }
                })?;
            let baseline = *initial_total.get_or_insert(report.total);
            if report.total > config.divergence_factor * baseline.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "diverged at epoch {epoch}: loss {} exceeds {}x the initial {}",
                    report.total, config.divergence_factor, baseline
                )));
            }
            sums.main_loss += report.main_loss;
            sums.aug_loss += report.aug_loss;
            sums.total += report.total;
            sums.grad_norm += report.grad_norm;
            steps += 1;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite weights after epoch {epoch}"
            )));
        }
        let n = steps.max(1) as f64;
        let entry = EpochLog {
            epoch,
            main_loss: sums.main_loss / n,
            aug_loss: sums.aug_loss / n,
            total: sums.total / n,
            grad_norm: sums.grad_norm / n,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::debug!(
            "epoch {epoch}: main {:.5} aug {:.5} total {:.5}",
            entry.main_loss,
            entry.aug_loss,
            entry.total
        );
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}
