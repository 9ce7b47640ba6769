use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::remote::{RemoteConfig, RemoteOracle};
use super::{
    build_prompt, sample_cold_pair, sample_user_queries, Choice, OracleChoice, Prompt,
    UserQueryText, DEFAULT_HISTORY_LEN, DEFAULT_TEMPLATE,
};
use crate::datasets::{Catalog, ItemMeta, SplitDataset};
use crate::error::{Error, Result};
use crate::model::vectorizer::{sparse_cosine, BowVectorizer};
use crate::synthworld::{TruePreference, World};
use crate::training::TripleSource;

/// One comparison as presented to the oracle: `a` is shown first.
#[derive(Debug, Clone)]
pub struct PairRequest {
    pub query: UserQueryText,
    pub a: ItemMeta,
    pub b: ItemMeta,
    pub prompt: Prompt,
}

pub trait PreferenceOracle: Send + Sync {
    fn source(&self) -> TripleSource;

    fn prefer(&self, req: &PairRequest) -> OracleChoice;

    /// Answers in input order.
    fn prefer_batch(&self, reqs: &[PairRequest]) -> Vec<OracleChoice> {
        reqs.iter().map(|r| self.prefer(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum OracleConfig {
    RemoteLlm(RemoteConfig),
    #[default]
    Lexical,
    Replay {
        path: PathBuf,
    },
    /// Needs a world: either loaded from `world` or handed in by the caller.
    TrueScore {
        #[serde(default)]
        world: Option<PathBuf>,
    },
    Noisy {
        inner: Box<OracleConfig>,
        flip_prob: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            OracleConfig::RemoteLlm(r) => r.validate(),
            OracleConfig::Noisy {
                inner, flip_prob, ..
            } => {
                if !(0.0..=1.0).contains(flip_prob) {
                    return Err(Error::Config(format!(
                        "flip_prob must lie in [0, 1], got {flip_prob}"
                    )));
                }
                inner.validate()
            }
            _ => Ok(()),
        }
    }

    /// The backend underneath any noise wrappers.
    pub fn base(&self) -> &OracleConfig {
        match self {
            OracleConfig::Noisy { inner, .. } => inner.base(),
            other => other,
        }
    }
}

pub fn build_oracle(
    config: &OracleConfig,
    catalog: &Catalog,
    world: Option<&Arc<World>>,
) -> Result<Box<dyn PreferenceOracle>> {
    config.validate()?;
    Ok(match config {
        OracleConfig::RemoteLlm(r) => Box::new(RemoteOracle::new(r.clone())?),
        OracleConfig::Lexical => Box::new(LexicalOracle::new(catalog)?),
        OracleConfig::Replay { path } => Box::new(ReplayOracle::load(path)?),
        OracleConfig::TrueScore { world: path } => {
            let w = match (world, path) {
                (Some(w), _) => w.clone(),
                (None, Some(p)) => Arc::new(World::load(p)?),
                (None, None) => {
                    return Err(Error::Config(
                        "true_score oracle needs a synthetic world".into(),
                    ))
                }
            };
            Box::new(TrueScoreOracle::new(w))
        }
        OracleConfig::Noisy {
            inner,
            flip_prob,
            seed,
        } => Box::new(NoisyOracle::new(
            build_oracle(inner, catalog, world)?,
            *flip_prob,
            *seed,
        )?),
    })
}

/// Picks the candidate whose TF-IDF vector is closer to the user's history.
pub struct LexicalOracle {
    vectorizer: BowVectorizer,
}

impl LexicalOracle {
    pub fn new(catalog: &Catalog) -> Result<Self> {
        let metas: Vec<ItemMeta> = catalog.meta.values().cloned().collect();
        if metas.is_empty() {
            return Err(Error::Data("lexical oracle needs item metadata".into()));
        }
        Ok(LexicalOracle {
            vectorizer: BowVectorizer::build(&metas, usize::MAX)?,
        })
    }

    pub fn from_vectorizer(vectorizer: BowVectorizer) -> Self {
        LexicalOracle { vectorizer }
    }
}

impl PreferenceOracle for LexicalOracle {
    fn source(&self) -> TripleSource {
        TripleSource::Lexical
    }

    fn prefer(&self, req: &PairRequest) -> OracleChoice {
        let history = self
            .vectorizer
            .transform(&req.query.history_titles.join(" "));
        let sa = sparse_cosine(&history, &self.vectorizer.transform(&req.a.text()));
        let sb = sparse_cosine(&history, &self.vectorizer.transform(&req.b.text()));
        OracleChoice::of(if sa > sb {
            Choice::A
        } else if sb > sa {
            Choice::B
        } else {
            Choice::Abstain
        })
    }
}

/// One recorded oracle answer, keyed by the pair as presented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub user: String,
    pub a: String,
    pub b: String,
    pub choice: Choice,
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TripleSource>,
}

pub struct ReplayOracle {
    answers: HashMap<(String, String, String), ReplayRecord>,
    source: TripleSource,
}

impl ReplayOracle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            records.push(serde_json::from_str::<ReplayRecord>(line).map_err(|e| {
                Error::Data(format!(
                    "{}:{}: bad replay record: {e}",
                    path.display(),
                    n + 1
                ))
            })?);
        }
        Ok(Self::from_records(records))
    }

    pub fn from_records(records: Vec<ReplayRecord>) -> Self {
        let source = records
            .iter()
            .find_map(|r| r.source)
            .unwrap_or(TripleSource::Replay);
        let mut answers = HashMap::new();
        for r in records {
            answers
                .entry((r.user.clone(), r.a.clone(), r.b.clone()))
                .or_insert(r);
        }
        ReplayOracle { answers, source }
    }
}

impl PreferenceOracle for ReplayOracle {
    fn source(&self) -> TripleSource {
        self.source
    }

    fn prefer(&self, req: &PairRequest) -> OracleChoice {
        let key = (
            req.query.user_id.clone(),
            req.a.item_id.clone(),
            req.b.item_id.clone(),
        );
        match self.answers.get(&key) {
            Some(r) => OracleChoice {
                raw_response: r.raw.clone(),
                ..OracleChoice::of(r.choice)
            },
            None => OracleChoice::abstain("replay miss"),
        }
    }
}

/// Answers from a synthetic world's true affinities.
pub struct TrueScoreOracle {
    world: Arc<World>,
}

impl TrueScoreOracle {
    pub fn new(world: Arc<World>) -> Self {
        TrueScoreOracle { world }
    }
}

impl PreferenceOracle for TrueScoreOracle {
    fn source(&self) -> TripleSource {
        TripleSource::TrueScore
    }

    fn prefer(&self, req: &PairRequest) -> OracleChoice {
        let w = &self.world;
        let (Some(u), Some(a), Some(b)) = (
            w.user_index(&req.query.user_id),
            w.item_index(&req.a.item_id),
            w.item_index(&req.b.item_id),
        ) else {
            return OracleChoice::abstain("id not in synthetic world");
        };
        OracleChoice::of(match w.prefer(u, a, b) {
            TruePreference::A => Choice::A,
            TruePreference::B => Choice::B,
            TruePreference::Tie => Choice::Abstain,
        })
    }
}

/// Flips the inner oracle's A/B answer with probability `flip_prob`. The coin
/// for each request is seeded from `(seed, prompt digest)`, so it does not
/// depend on call order.
pub struct NoisyOracle {
    inner: Box<dyn PreferenceOracle>,
    flip_prob: f64,
    seed: u64,
}

impl NoisyOracle {
    pub fn new(inner: Box<dyn PreferenceOracle>, flip_prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must lie in [0, 1], got {flip_prob}"
            )));
        }
        Ok(NoisyOracle {
            inner,
            flip_prob,
            seed,
        })
    }

    fn flips(&self, req: &PairRequest) -> bool {
        let stream = u64::from_str_radix(&req.prompt.digest[..16.min(req.prompt.digest.len())], 16)
            .unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.random::<f64>() < self.flip_prob
    }

    fn apply(&self, req: &PairRequest, mut c: OracleChoice) -> OracleChoice {
        if self.flips(req) {
            c.value = c.value.flipped();
        }
        c
    }
}

impl PreferenceOracle for NoisyOracle {
    fn source(&self) -> TripleSource {
        self.inner.source()
    }

    fn prefer(&self, req: &PairRequest) -> OracleChoice {
        self.apply(req, self.inner.prefer(req))
    }

    fn prefer_batch(&self, reqs: &[PairRequest]) -> Vec<OracleChoice> {
        let answers = self.inner.prefer_batch(reqs);
        reqs.iter()
            .zip(answers)
            .map(|(r, c)| self.apply(r, c))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pairs: usize,
    pub abstains: usize,
    /// Share of answered pairs matching the true preference.
    pub agreement: Option<f64>,
}

/// How often `oracle` agrees with the world's true preference on random
/// (user, cold pair) comparisons.
pub fn oracle_agreement(
    world: &World,
    split: &SplitDataset,
    oracle: &dyn PreferenceOracle,
    n_pairs: usize,
    seed: u64,
) -> Result<AgreementReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries = sample_user_queries(split, 1.0, DEFAULT_HISTORY_LEN, &mut rng)?;
    let cold = split.catalog.cold_list();
    let mut reqs = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        let query = queries[k % queries.len()].clone();
        let pair = sample_cold_pair(&cold, &mut rng)?;
        let meta = |id: &str| {
            split
                .catalog
                .meta_of(id)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no metadata for {id}")))
        };
        let (a, b) = (meta(&pair.a)?, meta(&pair.b)?);
        let prompt = build_prompt(&query, &a, &b, DEFAULT_TEMPLATE)?;
        reqs.push(PairRequest {
            query,
            a,
            b,
            prompt,
        });
    }
    let (mut agree, mut abstains) = (0usize, 0usize);
    for (req, c) in reqs.iter().zip(oracle.prefer_batch(&reqs)) {
        let truth = match (
            world.user_index(&req.query.user_id),
            world.item_index(&req.a.item_id),
            world.item_index(&req.b.item_id),
        ) {
            (Some(u), Some(a), Some(b)) => world.prefer(u, a, b),
            _ => return Err(Error::Data("split does not come from this world".into())),
        };
        match (c.value, truth) {
            (Choice::Abstain, _) => abstains += 1,
            (Choice::A, TruePreference::A) | (Choice::B, TruePreference::B) => agree += 1,
            _ => {}
        }
    }
    let answered = n_pairs - abstains;
    Ok(AgreementReport {
        pairs: n_pairs,
        abstains,
        agreement: (answered > 0).then(|| agree as f64 / answered as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, title: &str) -> ItemMeta {
        ItemMeta {
            item_id: id.into(),
            title: title.into(),
            categories: vec![],
        }
    }

    fn request(history: &[&str], a: ItemMeta, b: ItemMeta) -> PairRequest {
        let query = UserQueryText {
            user_id: "u".into(),
            history_titles: history.iter().map(|s| s.to_string()).collect(),
        };
        let prompt = build_prompt(&query, &a, &b, DEFAULT_TEMPLATE).unwrap();
        PairRequest {
            query,
            a,
            b,
            prompt,
        }
    }

    fn lexical(metas: &[ItemMeta]) -> LexicalOracle {
        LexicalOracle::from_vectorizer(BowVectorizer::build(metas, 1000).unwrap())
    }

    #[test]
    fn lexical_prefers_overlapping_title() {
        let metas = vec![
            meta("a", "Trail running shoes"),
            meta("b", "Lipstick"),
            meta("c", "Garden hose"),
            meta("d", "Shoes for trail running"),
        ];
        let o = lexical(&metas);
        let r = request(&["running shoes trail"], metas[0].clone(), metas[1].clone());
        assert_eq!(o.prefer(&r).value, Choice::A);
        let r = request(&["running shoes trail"], metas[1].clone(), metas[0].clone());
        assert_eq!(o.prefer(&r).value, Choice::B);
        // no overlap on either side
        let r = request(&["zzz"], metas[1].clone(), metas[2].clone());
        assert_eq!(o.prefer(&r).value, Choice::Abstain);
    }

    struct Fixed(Vec<Choice>, std::sync::atomic::AtomicUsize);

    impl PreferenceOracle for Fixed {
        fn source(&self) -> TripleSource {
            TripleSource::Llm
        }
        fn prefer(&self, _: &PairRequest) -> OracleChoice {
            let k = self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            OracleChoice::of(self.0[k % self.0.len()])
        }
    }

    fn requests(n: usize) -> Vec<PairRequest> {
        (0..n)
            .map(|k| request(&[&format!("h{k}")], meta("a", "x"), meta("b", "y")))
            .collect()
    }

    #[test]
    fn noisy_extremes() {
        let pattern = vec![Choice::A, Choice::B, Choice::Abstain, Choice::B];
        let reqs = requests(40);
        let base = Fixed(pattern.clone(), 0.into()).prefer_batch(&reqs);
        let zero = NoisyOracle::new(Box::new(Fixed(pattern.clone(), 0.into())), 0.0, 1).unwrap();
        assert_eq!(zero.prefer_batch(&reqs), base);
        let one = NoisyOracle::new(Box::new(Fixed(pattern, 0.into())), 1.0, 1).unwrap();
        for (n, b) in one.prefer_batch(&reqs).iter().zip(&base) {
            assert_eq!(n.value, b.value.flipped());
        }
        assert!(NoisyOracle::new(Box::new(Fixed(vec![Choice::A], 0.into())), 1.5, 0).is_err());
    }

    #[test]
    fn noisy_flip_rate_matches_probability() {
        let reqs = requests(4000);
        let o = NoisyOracle::new(Box::new(Fixed(vec![Choice::A], 0.into())), 0.3, 9).unwrap();
        let flipped = o
            .prefer_batch(&reqs)
            .iter()
            .filter(|c| c.value == Choice::B)
            .count();
        let rate = flipped as f64 / 4000.0;
        // 4 standard errors
        assert!(
            (rate - 0.3).abs() < 4.0 * (0.21f64 / 4000.0).sqrt(),
            "{rate}"
        );
        // order independent
        let single: Vec<_> = reqs.iter().rev().map(|r| o.prefer(r).value).collect();
        let batch: Vec<_> = o
            .prefer_batch(&reqs)
            .into_iter()
            .rev()
            .map(|c| c.value)
            .collect();
        assert_eq!(single, batch);
    }

    #[test]
    fn replay_hits_and_misses() {
        let o = ReplayOracle::from_records(vec![ReplayRecord {
            user: "u".into(),
            a: "a".into(),
            b: "b".into(),
            choice: Choice::B,
            raw: Some("B".into()),
            source: Some(TripleSource::Llm),
        }]);
        assert_eq!(o.source(), TripleSource::Llm);
        let hit = o.prefer(&request(&["x"], meta("a", "x"), meta("b", "y")));
        assert_eq!(
            (hit.value, hit.raw_response.as_deref()),
            (Choice::B, Some("B"))
        );
        let miss = o.prefer(&request(&["x"], meta("b", "y"), meta("a", "x")));
        assert_eq!(miss.value, Choice::Abstain);
        assert!(miss.note.is_some());
    }

    #[test]
    fn config_parses_from_toml() {
        let c: OracleConfig = toml::from_str(
            "backend = \"noisy\"\nflip_prob = 0.2\nseed = 3\n[inner]\nbackend = \"true_score\"\n",
        )
        .unwrap();
        assert_eq!(
            c,
            OracleConfig::Noisy {
                inner: Box::new(OracleConfig::TrueScore { world: None }),
                flip_prob: 0.2,
                seed: 3
            }
        );
        assert!(c.validate().is_ok());
        let bad = OracleConfig::Noisy {
            inner: Box::new(OracleConfig::Lexical),
            flip_prob: -0.1,
            seed: 0,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
