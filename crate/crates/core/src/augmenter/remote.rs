use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::oracle::{PairRequest, PreferenceOracle};
use super::{parse_choice, OracleChoice};
use crate::error::{Error, Result};
use crate::training::TripleSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, auth_env: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            auth_env: auth_env.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.endpoint.is_empty() {
            return Err(Error::Config("remote endpoint is empty".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct TextBody {
    text: String,
}

/// HTTP backend: `POST {"prompt": ...}` expecting `{"text": ...}`.
pub struct RemoteOracle {
    config: RemoteConfig,
    token: String,
    agent: ureq::Agent,
}

impl RemoteOracle {
    /// Fails fast when the token variable is unset.
    pub fn new(config: RemoteConfig) -> Result<Self> {
        config.validate()?;
        let token = std::env::var(&config.auth_env).map_err(|_| {
            Error::Config(format!(
                "auth environment variable {} is not set",
                config.auth_env
            ))
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteOracle {
            config,
            token,
            agent,
        })
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(PromptBody { prompt })
            .map_err(|e| format!("transport: {e}"))?;
        if resp.status() != 200 {
            return Err(format!("status {}", resp.status()));
        }
        resp.body_mut()
            .read_to_string()
            .map_err(|e| format!("read: {e}"))
    }
}

impl PreferenceOracle for RemoteOracle {
    fn source(&self) -> TripleSource {
        TripleSource::Llm
    }

    fn prefer(&self, req: &PairRequest) -> OracleChoice {
        let start = Instant::now();
        let mut last_err = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let wait = self
                    .config
                    .backoff_base_ms
                    .saturating_mul(1 << (attempt - 1).min(20));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&req.prompt.text) {
                Ok(body) => {
                    let latency = start.elapsed().as_millis() as u64;
                    let mut choice = match serde_json::from_str::<TextBody>(&body) {
                        Ok(t) => parse_choice(&t.text, &req.a, &req.b),
                        Err(e) => OracleChoice {
                            raw_response: Some(body),
                            ..OracleChoice::abstain(format!("malformed response: {e}"))
                        },
                    };
                    choice.latency_ms = Some(latency);
                    return choice;
                }
                Err(e) => {
                    log::debug!("remote oracle attempt {attempt} failed: {e}");
                    last_err = e;
                }
            }
        }
        OracleChoice {
            latency_ms: Some(start.elapsed().as_millis() as u64),
            ..OracleChoice::abstain(format!(
                "gave up after {} attempts: {last_err}",
                self.config.max_retries + 1
            ))
        }
    }

    /// At most `max_in_flight` requests are outstanding; answers come back
    /// in input order.
    fn prefer_batch(&self, reqs: &[PairRequest]) -> Vec<OracleChoice> {
        let workers = self.config.max_in_flight.min(reqs.len());
        if workers <= 1 {
            return reqs.iter().map(|r| self.prefer(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<OracleChoice>>> = Mutex::new(vec![None; reqs.len()]);
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = reqs.get(k) else { break };
                    let answer = self.prefer(req);
                    slots.lock().expect("slot lock")[k] = Some(answer);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock")
            .into_iter()
            .map(|c| c.expect("every request answered"))
            .collect()
    }
}
