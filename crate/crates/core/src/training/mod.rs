//! Optimization under the in-batch sampled-softmax loss plus the pairwise
//! augmentation loss.

mod gradcheck;
mod losses;
mod optimizer;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, GradCheckReport};
pub use losses::{
    bpr_aug_loss, bpr_term, sampled_softmax_loss, total_loss, Example, LossOptions, TripleRef,
};
pub use optimizer::{Optimizer, OptimizerKind};
pub use trainer::{train, train_step, EpochLog, TrainOutcome, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleSource {
    Llm,
    Lexical,
    Replay,
    TrueScore,
}

/// One synthetic preference: `user` prefers cold item `pos` over `neg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugTriple {
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "pos")]
    pub pos_item: String,
    #[serde(rename = "neg")]
    pub neg_item: String,
    pub source: TripleSource,
    #[serde(default)]
    pub prompt_digest: Option<String>,
}

pub fn read_triples(path: &Path) -> Result<Vec<AugTriple>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}:{}: bad triple: {e}", path.display(), n + 1)))
        })
        .collect()
}

pub fn write_triples(path: &Path, triples: &[AugTriple]) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugReduction {
    /// Plain sum over the triples of a mini-batch.
    Sum,
    /// Sum divided by the mini-batch size, matching the per-example scale of
    /// the main loss.
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// λ in `total = main + λ·aug`.
    pub aug_weight: f64,
    pub aug_reduction: AugReduction,
    pub softmax_temperature: f64,
    pub logq_correction: bool,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Abort when a step's total loss exceeds this multiple of the first.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 30,
            aug_weight: 1.0,
            aug_reduction: AugReduction::Mean,
            softmax_temperature: 1.0,
            logq_correction: false,
            optimizer: OptimizerKind::default(),
            seed: 0,
            divergence_factor: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.aug_weight >= 0.0) {
            return bad(format!("aug_weight must be >= 0, got {}", self.aug_weight));
        }
        if !(self.softmax_temperature > 0.0) {
            return bad(format!(
                "softmax_temperature must be > 0, got {}",
                self.softmax_temperature
            ));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions<'static> {
        LossOptions {
            temperature: self.softmax_temperature,
            log_q: None,
            aug_weight: self.aug_weight,
            aug_reduction: self.aug_reduction,
        }
    }
}

/// Per-step (or per-epoch mean) loss summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub main_loss: f64,
    pub aug_loss: f64,
    pub total: f64,
    pub grad_norm: f64,
}
