//! Chat-completion providers: a live OpenAI-compatible HTTP client with
//! retry/backoff, and a fixture table keyed by prompt digest for offline runs.
//!
//! Nothing here interprets response content; truncated or garbled text is
//! returned as-is (except for an explicit `length` finish reason).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    Fixture,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

fn default_timeout() -> Duration {
    Duration::from_secs(120)
}

fn default_backoff() -> Duration {
    Duration::from_secs(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider: ProviderKind,
    #[serde(default)]
    pub endpoint_url: String,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout", with = "secs", rename = "timeout_secs")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub credential_source: String,
    /// First retry delay; later delays double.
    #[serde(default = "default_backoff", with = "secs", rename = "backoff_base_secs")]
    pub backoff_base: Duration,
}

fn default_max_tokens() -> u32 {
    8192
}

fn default_retries() -> u32 {
    3
}

impl ModelConfig {
    pub fn fixture(model_id: impl Into<String>) -> Self {
        ModelConfig {
            provider: ProviderKind::Fixture,
            endpoint_url: String::new(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            timeout: default_timeout(),
            max_retries: 0,
            credential_source: String::new(),
            backoff_base: default_backoff(),
        }
    }

    pub fn live(
        endpoint_url: impl Into<String>,
        model_id: impl Into<String>,
        credential_source: impl Into<String>,
    ) -> Self {
        ModelConfig {
            provider: ProviderKind::Live,
            endpoint_url: endpoint_url.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            timeout: default_timeout(),
            max_retries: default_retries(),
            credential_source: credential_source.into(),
            backoff_base: default_backoff(),
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidConfig(
                "max_output_tokens must be positive".into(),
            ));
        }
        if self.provider == ProviderKind::Live {
            if self.endpoint_url.trim().is_empty() {
                return Err(GatewayError::InvalidConfig("live provider needs endpoint_url".into()));
            }
            if self.credential_source.trim().is_empty() {
                return Err(GatewayError::InvalidConfig(
                    "live provider needs credential_source".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub model_id: String,
    pub attempts: u32,
    pub usage: Option<Usage>,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("environment variable {0} holding the API key is not set")]
    CredentialMissing(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("gave up after {attempts} attempt(s); last status {last_status:?}: {last_error}")]
    RetriesExhausted {
        attempts: u32,
        last_status: Option<u16>,
        last_error: String,
    },
    #[error("no fixture registered for prompt digest {digest}")]
    FixtureMiss { digest: String },
    #[error("response cut off at the token limit ({} bytes received)", partial.len())]
    ResponseTruncated { partial: String },
    #[error("provider rejected the request with HTTP {status}: {body}")]
    RequestRejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

impl GatewayError {
    /// Short machine-readable name, used in job failure reasons.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::CredentialMissing(_) => "CredentialMissing",
            GatewayError::Timeout { .. } => "Timeout",
            GatewayError::RetriesExhausted { .. } => "RetriesExhausted",
            GatewayError::FixtureMiss { .. } => "FixtureMiss",
            GatewayError::ResponseTruncated { .. } => "ResponseTruncated",
            GatewayError::RequestRejected { .. } => "RequestRejected",
            GatewayError::MalformedResponse(_) => "MalformedResponse",
            GatewayError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

/// Fixture responses keyed by prompt digest. Reads run concurrently;
/// registration takes the write lock.
#[derive(Debug, Default)]
pub struct FixtureTable {
    entries: RwLock<HashMap<String, String>>,
}

impl FixtureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later registrations under the same digest win.
    pub fn register(&self, digest: impl Into<String>, response_text: impl Into<String>) {
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(digest.into(), response_text.into());
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(digest)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads every `<digest>.txt` (or `.md`) file in `dir`.
    pub fn load_dir(&self, dir: &Path) -> std::io::Result<usize> {
        let mut n = 0;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str());
            if !matches!(ext, Some("txt") | Some("md")) {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            self.register(stem, fs::read_to_string(&path)?);
            n += 1;
        }
        Ok(n)
    }
}

/// Counting semaphore bounding in-flight completions.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// Delay before retry number `retry` (0-based): `base * 2^retry`, stretched
/// by a jitter factor in `[1, 1.5)`. Since the doubling outgrows the jitter,
/// the sequence never decreases.
pub fn backoff_delay(base: Duration, retry: u32, jitter: f64) -> Duration {
    let jitter = jitter.clamp(0.0, 0.499_999);
    base.mul_f64(2f64.powi(retry.min(30) as i32) * (1.0 + jitter))
}

pub const FIXTURE_DEFAULT: &str = "fixture-default";
pub const OPENAI_DEFAULT: &str = "openai-default";

/// Configs available without a models file: the offline fixture provider and
/// an OpenAI endpoint keyed by `OPENAI_API_KEY`.
pub fn builtin_models() -> BTreeMap<String, ModelConfig> {
    BTreeMap::from([
        (FIXTURE_DEFAULT.to_string(), ModelConfig::fixture(FIXTURE_DEFAULT)),
        (
            OPENAI_DEFAULT.to_string(),
            ModelConfig::live(
                "https://api.openai.com/v1/chat/completions",
                "gpt-4o",
                "OPENAI_API_KEY",
            ),
        ),
    ])
}

pub const DEFAULT_PARALLELISM: usize = 2;

#[derive(Debug, Clone)]
pub struct Gateway {
    fixtures: Arc<FixtureTable>,
    limiter: Arc<Limiter>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(DEFAULT_PARALLELISM)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<ChatChoice>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum AttemptFailure {
    Retryable {
        status: Option<u16>,
        error: String,
        timed_out: bool,
    },
    Fatal(GatewayError),
}

impl Gateway {
    pub fn new(parallelism: usize) -> Self {
        Gateway {
            fixtures: Arc::new(FixtureTable::new()),
            limiter: Arc::new(Limiter::new(parallelism)),
        }
    }

    pub fn with_fixtures(fixtures: Arc<FixtureTable>, parallelism: usize) -> Self {
        Gateway {
            fixtures,
            limiter: Arc::new(Limiter::new(parallelism)),
        }
    }

    pub fn fixtures(&self) -> &Arc<FixtureTable> {
        &self.fixtures
    }

    pub fn register_fixture(&self, digest: impl Into<String>, response_text: impl Into<String>) {
        self.fixtures.register(digest, response_text);
    }

    /// Sends `prompt` to the configured provider. Blocks the calling thread.
    pub fn complete(&self, prompt: &PromptText, cfg: &ModelConfig) -> Result<RawResponse, GatewayError> {
        cfg.check()?;
        let _permit = self.limiter.acquire();
        match cfg.provider {
            ProviderKind::Fixture => {
                let text = self
                    .fixtures
                    .get(&prompt.digest)
                    .ok_or_else(|| GatewayError::FixtureMiss {
                        digest: prompt.digest.clone(),
                    })?;
                Ok(RawResponse {
                    text,
                    model_id: cfg.model_id.clone(),
                    attempts: 1,
                    usage: None,
                    received_at: Utc::now(),
                })
            }
            ProviderKind::Live => self.complete_live(prompt, cfg),
        }
    }

    fn complete_live(&self, prompt: &PromptText, cfg: &ModelConfig) -> Result<RawResponse, GatewayError> {
        let key = std::env::var(&cfg.credential_source)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::CredentialMissing(cfg.credential_source.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        let body = ChatRequest {
            model: &cfg.model_id,
            messages: [ChatMessage {
                role: "user",
                content: &prompt.text,
            }],
            temperature: cfg.temperature,
            max_tokens: cfg.max_output_tokens,
        };

        let mut rng = rand::rng();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let failure = match self.attempt(&client, cfg, &key, &body) {
                Ok((text, model, usage)) => {
                    return Ok(RawResponse {
                        text,
                        model_id: model.unwrap_or_else(|| cfg.model_id.clone()),
                        attempts,
                        usage,
                        received_at: Utc::now(),
                    })
                }
                Err(AttemptFailure::Fatal(e)) => return Err(e),
                Err(retryable) => retryable,
            };
            let AttemptFailure::Retryable {
                status,
                error,
                timed_out,
            } = failure
            else {
                unreachable!()
            };
            if attempts > cfg.max_retries {
                return Err(if timed_out {
                    GatewayError::Timeout { attempts }
                } else {
                    GatewayError::RetriesExhausted {
                        attempts,
                        last_status: status,
                        last_error: error,
                    }
                });
            }
            let delay = backoff_delay(cfg.backoff_base, attempts - 1, rng.random_range(0.0..0.5));
            log::warn!("completion attempt {attempts} failed ({error}); retrying in {delay:?}");
            std::thread::sleep(delay);
        }
    }

    #[allow(clippy::type_complexity)]
    fn attempt(
        &self,
        client: &reqwest::blocking::Client,
        cfg: &ModelConfig,
        key: &str,
        body: &ChatRequest<'_>,
    ) -> Result<(String, Option<String>, Option<Usage>), AttemptFailure> {
        let resp = client
            .post(&cfg.endpoint_url)
            .bearer_auth(key)
            .json(body)
            .send()
            .map_err(|e| AttemptFailure::Retryable {
                status: None,
                timed_out: e.is_timeout(),
                error: e.to_string(),
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AttemptFailure::Retryable {
            status: Some(status.as_u16()),
            timed_out: e.is_timeout(),
            error: e.to_string(),
        })?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptFailure::Retryable {
                status: Some(status.as_u16()),
                error: format!("HTTP {status}"),
                timed_out: false,
            });
        }
        if !status.is_success() {
            return Err(AttemptFailure::Fatal(GatewayError::RequestRejected {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            }));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptFailure::Fatal(GatewayError::MalformedResponse(e.to_string())))?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| {
            AttemptFailure::Fatal(GatewayError::MalformedResponse("no choices".into()))
        })?;
        let content = choice.message.content.unwrap_or_default();
        if choice.finish_reason.as_deref() == Some("length") {
            return Err(AttemptFailure::Fatal(GatewayError::ResponseTruncated {
                partial: content,
            }));
        }
        let usage = parsed.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok((content, parsed.model, usage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptText;
    use crate::taxonomy::prompt_digest;
    use std::collections::BTreeMap;

    fn prompt(text: &str) -> PromptText {
        PromptText {
            text: text.into(),
            digest: prompt_digest(text),
            section_spans: BTreeMap::new(),
        }
    }

    #[test]
    fn fixture_round_trip_and_overwrite() {
        let gw = Gateway::default();
        let cfg = ModelConfig::fixture("fixture");
        let p = prompt("hello");
        gw.register_fixture(&p.digest, "first\r\nbytes ✓");
        let r = gw.complete(&p, &cfg).unwrap();
        assert_eq!(r.text, "first\r\nbytes ✓");
        assert_eq!(r.attempts, 1);
        gw.register_fixture(&p.digest, "second");
        assert_eq!(gw.complete(&p, &cfg).unwrap().text, "second");
    }

    #[test]
    fn fixture_miss() {
        let gw = Gateway::default();
        let err = gw
            .complete(&prompt("unknown"), &ModelConfig::fixture("f"))
            .unwrap_err();
        assert!(matches!(err, GatewayError::FixtureMiss { .. }));
    }

    #[test]
    fn live_requires_endpoint_and_credential_name() {
        let mut cfg = ModelConfig::live("", "m", "KEY");
        assert!(matches!(cfg.check(), Err(GatewayError::InvalidConfig(_))));
        cfg.endpoint_url = "http://127.0.0.1:9".into();
        cfg.credential_source.clear();
        assert!(matches!(cfg.check(), Err(GatewayError::InvalidConfig(_))));
    }

    #[test]
    fn missing_credential() {
        let cfg = ModelConfig::live("http://127.0.0.1:9", "m", "EXAMGEN_TEST_KEY_THAT_IS_NOT_SET");
        let err = Gateway::default().complete(&prompt("x"), &cfg).unwrap_err();
        assert_eq!(err.code(), "CredentialMissing");
    }

    #[test]
    fn backoff_is_exponential() {
        let base = Duration::from_secs(1);
        assert_eq!(backoff_delay(base, 0, 0.0), Duration::from_secs(1));
        assert_eq!(backoff_delay(base, 1, 0.0), Duration::from_secs(2));
        assert_eq!(backoff_delay(base, 3, 0.0), Duration::from_secs(8));
    }

    #[test]
    fn load_fixture_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("abc.txt"), "response").unwrap();
        std::fs::write(dir.path().join("ignored.json"), "{}").unwrap();
        let table = FixtureTable::new();
        assert_eq!(table.load_dir(dir.path()).unwrap(), 1);
        assert_eq!(table.get("abc").as_deref(), Some("response"));
    }
}
