//! Pairwise preference augmentation for cold items.
//!
//! A sampled user's recent history is rendered into a prompt together with two
//! cold candidates; a [`PreferenceOracle`] picks one and the pick becomes an
//! [`AugTriple`](crate::training::AugTriple).

mod oracle;
mod pipeline;
mod prompt;
mod remote;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{Error, Result};

pub use oracle::{
    build_oracle, oracle_agreement, LexicalOracle, NoisyOracle, OracleConfig, PairRequest,
    PreferenceOracle, ReplayOracle, ReplayRecord, TrueScoreOracle,
};
pub use pipeline::{generate_augmentations, AugmentOptions, AugmentOutput, GenerationReport};
pub use prompt::{build_prompt, parse_choice, Prompt, DEFAULT_TEMPLATE};
pub use remote::{RemoteConfig, RemoteOracle};

/// Titles shown per user in a prompt.
pub const DEFAULT_HISTORY_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQueryText {
    pub user_id: String,
    /// Oldest first, at most `history_len` entries.
    pub history_titles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColdPair {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    Abstain,
}

impl Choice {
    pub fn flipped(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
            Choice::Abstain => Choice::Abstain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleChoice {
    pub value: Choice,
    pub raw_response: Option<String>,
    pub latency_ms: Option<u64>,
    /// Why the oracle abstained, when it was not a clean refusal.
    pub note: Option<String>,
}

impl OracleChoice {
    pub fn of(value: Choice) -> Self {
        OracleChoice {
            value,
            raw_response: None,
            latency_ms: None,
            note: None,
        }
    }

    pub fn abstain(note: impl Into<String>) -> Self {
        OracleChoice {
            note: Some(note.into()),
            ..OracleChoice::of(Choice::Abstain)
        }
    }
}

/// `ceil(p * eligible)` distinct users with train history, each with the
/// titles of their last `history_len` train items.
pub fn sample_user_queries(
    split: &SplitDataset,
    fraction: f64,
    history_len: usize,
    rng: &mut impl Rng,
) -> Result<Vec<UserQueryText>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "query fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let histories = split.train_histories();
    let eligible: Vec<(&String, &Vec<String>)> =
        histories.iter().filter(|(_, h)| !h.is_empty()).collect();
    if eligible.is_empty() {
        return Err(Error::Data("no users with train history to query".into()));
    }
    let n = ((fraction * eligible.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let n = n.min(eligible.len());
    Ok(index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|k| {
            let (user, history) = eligible[k];
            let start = history.len().saturating_sub(history_len.max(1));
            UserQueryText {
                user_id: user.clone(),
                history_titles: history[start..]
                    .iter()
                    .map(|item| match split.catalog.meta_of(item) {
                        Some(m) if !m.display_title().trim().is_empty() => m.display_title(),
                        _ => item.clone(),
                    })
                    .collect(),
            }
        })
        .collect())
}

pub fn sample_cold_pair(cold_ids: &[String], rng: &mut impl Rng) -> Result<ColdPair> {
    if cold_ids.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 cold items to form a pair, have {}",
            cold_ids.len()
        )));
    }
    let picked = index::sample(rng, cold_ids.len(), 2);
    Ok(ColdPair {
        a: cold_ids[picked.index(0)].clone(),
        b: cold_ids[picked.index(1)].clone(),
    })
}
