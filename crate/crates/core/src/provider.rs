//! Completion backends, response cache, and the bounded batch runner.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quizgen::Prompt;

pub const DEFAULT_API_KEY_ENV: &str = "REQUIZ_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    HttpCompletionApi {
        endpoint: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default = "default_key_env")]
        api_key_env: String,
    },
    Replay {
        transcript: PathBuf,
    },
    Constant {
        text: String,
    },
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 5, initial_backoff_ms: 500, max_backoff_ms: 30_000 }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub backend: Backend,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
}

fn default_inflight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

impl ProviderConfig {
    pub fn new(backend: Backend) -> Self {
        ProviderConfig {
            backend,
            max_inflight: default_inflight(),
            retry: RetryPolicy::default(),
            request_timeout_secs: default_timeout(),
        }
    }

    pub fn provider_id(&self) -> &'static str {
        match self.backend {
            Backend::HttpCompletionApi { .. } => "http_completion_api",
            Backend::Replay { .. } => "replay",
            Backend::Constant { .. } => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub question_id: String,
    pub rep_index: u32,
    pub raw_text: String,
    pub provider_id: String,
    pub model_id: String,
    pub cache_key: String,
    pub cache_hit: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited by the backend")]
    RateLimited,
    #[error("no transcript entry for key {0}")]
    ReplayMiss(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// One line of a transcript or cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub raw_text: String,
}

/// Stable content hash of everything that determines a completion. At
/// temperature 0 sampling is deterministic, so repetitions share one key.
pub fn cache_key(prompt: &Prompt, rep_index: u32) -> String {
    let p = &prompt.params;
    let mut obj = json!({
        "model_id": p.model_id,
        "prompt": prompt.text,
        "temperature": p.temperature,
        "top_p": p.top_p,
        "max_tokens": p.max_tokens,
        "stop": prompt.stop_sequences,
    });
    if p.temperature > 0.0 {
        obj["rep_index"] = json!(rep_index);
    }
    // serde_json maps are key-sorted, so this serialization is canonical.
    let canonical = serde_json::to_string(&obj).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Cuts `text` at the first occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min();
    match cut {
        Some(i) => text[..i].to_string(),
        None => text.to_string(),
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, ProviderError> {
    let file = File::open(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProviderError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_str(&line)
            .map_err(|e| ProviderError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

pub struct Provider {
    cfg: ProviderConfig,
    replay: HashMap<String, String>,
    cache: Mutex<HashMap<String, String>>,
    cache_file: Mutex<Option<File>>,
    agent: Option<ureq::Agent>,
}

impl Provider {
    pub fn new(cfg: ProviderConfig) -> Result<Provider, ProviderError> {
        if cfg.max_inflight == 0 {
            return Err(ProviderError::Config("max_inflight must be at least 1".into()));
        }
        let mut replay = HashMap::new();
        if let Backend::Replay { transcript } = &cfg.backend {
            for e in read_transcript(transcript)? {
                replay.entry(e.key).or_insert(e.raw_text);
            }
        }
        let agent = match cfg.backend {
            Backend::HttpCompletionApi { .. } => Some(
                ureq::Agent::config_builder()
                    .http_status_as_error(false)
                    .timeout_global(Some(Duration::from_secs(cfg.request_timeout_secs)))
                    .build()
                    .into(),
            ),
            _ => None,
        };
        Ok(Provider { cfg, replay, cache: Mutex::new(HashMap::new()), cache_file: Mutex::new(None), agent })
    }

    /// Loads previously cached completions from `path` and appends every new
    /// completion to it, so an interrupted run resumes without re-querying.
    /// The file uses the transcript format and can be replayed later.
    pub fn with_cache_file(self, path: &Path) -> Result<Provider, ProviderError> {
        if path.exists() {
            let mut cache = self.cache.lock().expect("cache lock");
            for e in read_transcript(path)? {
                cache.entry(e.key).or_insert(e.raw_text);
            }
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| ProviderError::Io(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        *self.cache_file.lock().expect("cache file lock") = Some(file);
        Ok(self)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    /// Returns one completion for `prompt`, from cache when possible.
    pub fn complete(&self, prompt: &Prompt, question_id: &str, rep_index: u32) -> Result<Completion, ProviderError> {
        let key = cache_key(prompt, rep_index);
        let start = Instant::now();
        let cached = self.cache.lock().expect("cache lock").get(&key).cloned();
        let (raw_text, cache_hit) = match cached {
            Some(text) => (text, true),
            None => {
                let text = truncate_at_stop(&self.fetch(prompt, &key)?, &prompt.stop_sequences);
                self.remember(&key, &text)?;
                (text, false)
            }
        };
        Ok(Completion {
            question_id: question_id.to_string(),
            rep_index,
            raw_text,
            provider_id: self.cfg.provider_id().to_string(),
            model_id: prompt.params.model_id.clone(),
            cache_key: key,
            cache_hit,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }

    fn remember(&self, key: &str, text: &str) -> Result<(), ProviderError> {
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.contains_key(key) {
            return Ok(());
        }
        cache.insert(key.to_string(), text.to_string());
        if let Some(f) = self.cache_file.lock().expect("cache file lock").as_mut() {
            let line = serde_json::to_string(&TranscriptEntry { key: key.to_string(), raw_text: text.to_string() })
                .map_err(|e| ProviderError::Io(e.to_string()))?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| ProviderError::Io(e.to_string()))?;
        }
        Ok(())
    }

    fn fetch(&self, prompt: &Prompt, key: &str) -> Result<String, ProviderError> {
        match &self.cfg.backend {
            Backend::Constant { text } => Ok(text.clone()),
            Backend::Replay { .. } => self.replay.get(key).cloned().ok_or_else(|| ProviderError::ReplayMiss(key.into())),
            Backend::HttpCompletionApi { endpoint, api_key_env } => self.fetch_http(prompt, endpoint, api_key_env),
        }
    }

    fn fetch_http(&self, prompt: &Prompt, endpoint: &str, key_env: &str) -> Result<String, ProviderError> {
        let token = std::env::var(key_env)
            .map_err(|_| ProviderError::Auth(format!("environment variable {key_env} is not set")))?;
        let agent = self.agent.as_ref().expect("http backend has an agent");
        let p = &prompt.params;
        let body = json!({
            "model": p.model_id,
            "prompt": prompt.text,
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
            "stop": prompt.stop_sequences,
        });
        let policy = self.cfg.retry;
        let mut attempt = 0;
        loop {
            let (err, wait) = match agent
                .post(endpoint)
                .header("Authorization", &format!("Bearer {token}"))
                .send_json(&body)
            {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => {
                            let v: serde_json::Value =
                                resp.body_mut().read_json().map_err(|e| ProviderError::Protocol(e.to_string()))?;
                            return v["choices"][0]["text"]
                                .as_str()
                                .map(str::to_string)
                                .ok_or_else(|| ProviderError::Protocol(format!("no choices[0].text in {v}")));
                        }
                        401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}"))),
                        429 => {
                            let retry_after = resp
                                .headers()
                                .get("retry-after")
                                .and_then(|h| h.to_str().ok())
                                .and_then(|s| s.trim().parse::<u64>().ok())
                                .map(Duration::from_secs);
                            let wait = retry_after.unwrap_or_default().max(policy.backoff(attempt));
                            (ProviderError::RateLimited, wait)
                        }
                        500..=599 => (ProviderError::Network(format!("HTTP {status}")), policy.backoff(attempt)),
                        _ => {
                            let text = resp.body_mut().read_to_string().unwrap_or_default();
                            return Err(ProviderError::Protocol(format!("HTTP {status}: {text}")));
                        }
                    }
                }
                Err(e) => (ProviderError::Network(e.to_string()), policy.backoff(attempt)),
            };
            if attempt >= policy.max_retries {
                return Err(err);
            }
            log::warn!("request failed ({err}); retrying in {wait:?}");
            thread::sleep(wait);
            attempt += 1;
        }
    }

    /// Requests `n_reps` completions for each item using at most
    /// `max_inflight` concurrent workers. Output is sorted by
    /// (question_id, rep_index); failures are returned in place.
    pub fn run_batch(&self, items: &[BatchItem], n_reps: u32) -> Vec<BatchResult> {
        let work: Vec<(usize, u32)> = (0..items.len()).flat_map(|i| (0..n_reps).map(move |r| (i, r))).collect();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<BatchResult>> = Mutex::new(Vec::with_capacity(work.len()));
        let workers = self.cfg.max_inflight.min(work.len());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let n = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(i, rep)) = work.get(n) else { break };
                    let item = &items[i];
                    let outcome = self.complete(&item.prompt, &item.question_id, rep);
                    results.lock().expect("results lock").push(BatchResult {
                        question_id: item.question_id.clone(),
                        rep_index: rep,
                        outcome,
                    });
                });
            }
        });
        let mut out = results.into_inner().expect("results lock");
        out.sort_by(|a, b| (&a.question_id, a.rep_index).cmp(&(&b.question_id, b.rep_index)));
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub question_id: String,
    pub prompt: Prompt,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub question_id: String,
    pub rep_index: u32,
    pub outcome: Result<Completion, ProviderError>,
}
