//! Chat generation: providers, retries, post-processing and the record
//! handed to the review queue.

mod mock;
mod postprocess;

use std::collections::BTreeSet;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use mock::{DownMock, EchoMock, ParaphraseMock};
pub use postprocess::{
    apply_corrections, extract_json, guardrail_check, postprocess, CorrectionError, CorrectionRule, CorrectionSet,
    Extracted, Guardrail, GuardrailVerdict, PostprocessFlag, Processed, WordlistGuardrail,
};

use crate::http::{agent, join_url, post_json, HttpFailure};
use crate::prompt::PromptBundle;
use crate::retry::{Attempt, RetryPolicy};

/// Failure of a single provider call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("{0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
    #[error("malformed provider response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("provider returned an empty completion")]
    Empty,
}

impl GenerateError {
    pub fn attempts(&self) -> Option<u32> {
        match self {
            GenerateError::Provider { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;
    /// True for providers whose output is a pure function of the bundle.
    fn is_deterministic(&self) -> bool {
        false
    }
    fn complete(&self, bundle: &PromptBundle) -> Result<String, CallError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub base_url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_temperature() -> f64 {
    0.2
}

fn default_max_tokens() -> u32 {
    256
}

fn default_timeout() -> u64 {
    60
}

impl ChatConfig {
    /// Reads LLM_API_BASE, LLM_API_KEY, LLM_MODEL and LLM_TEMPERATURE.
    pub fn from_env() -> Result<Self, GenerateError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, GenerateError> {
        let need = |k: &str| {
            get(k)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| GenerateError::Config(format!("{k} is not set")))
        };
        let temperature = match get("LLM_TEMPERATURE") {
            Some(t) => t
                .trim()
                .parse()
                .map_err(|_| GenerateError::Config(format!("LLM_TEMPERATURE is not a number: {t:?}")))?,
            None => default_temperature(),
        };
        Ok(Self {
            base_url: need("LLM_API_BASE")?,
            api_key: get("LLM_API_KEY"),
            model: need("LLM_MODEL")?,
            temperature,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
        })
    }
}

/// OpenAI-style `/chat/completions` client.
pub struct HttpChatProvider {
    config: ChatConfig,
    agent: ureq::Agent,
}

impl HttpChatProvider {
    pub fn new(config: ChatConfig) -> Self {
        let agent = agent(Duration::from_secs(config.timeout_secs));
        Self { config, agent }
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
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

impl ChatProvider for HttpChatProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, CallError> {
        let req = ChatRequest {
            model: &self.config.model,
            messages: bundle
                .messages()
                .into_iter()
                .map(|(role, content)| ChatMessage { role, content })
                .collect(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let url = join_url(&self.config.base_url, "chat/completions");
        let resp: serde_json::Value =
            post_json(&self.agent, &url, self.config.api_key.as_deref(), &req).map_err(|e| match e {
                HttpFailure::Decode(m) => CallError::Protocol(m),
                other => match other.classify() {
                    Attempt::Retry(e) => CallError::Retryable(e.to_string()),
                    Attempt::Fatal(e) => CallError::Fatal(e.to_string()),
                },
            })?;
        resp.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| CallError::Protocol("no choices[0].message.content".into()))
    }
}

/// Calls the provider under `retry`. Only retryable failures are repeated,
/// and a successful completion is returned as soon as it arrives.
pub fn generate(bundle: &PromptBundle, provider: &dyn ChatProvider, retry: &RetryPolicy) -> Result<String, GenerateError> {
    retry
        .run(|_| {
            provider.complete(bundle).map_err(|e| match e {
                CallError::Retryable(_) => Attempt::Retry(e),
                other => Attempt::Fatal(other),
            })
        })
        .map_err(|ex| match ex.last {
            CallError::Protocol(m) => GenerateError::Protocol(m),
            other => GenerateError::Provider {
                attempts: ex.attempts,
                message: other.to_string(),
            },
        })
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn elapsed_ms(&self, since: Instant) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn elapsed_ms(&self, since: Instant) -> u64 {
        since.elapsed().as_millis() as u64
    }
}

/// Constant time and zero latency, for byte-identical reruns.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Default for FixedClock {
    fn default() -> Self {
        Self(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }

    fn elapsed_ms(&self, _since: Instant) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub prompt_hash: String,
    pub model_id: String,
    pub raw_output: String,
    pub processed_output: String,
    pub postprocess_flags: BTreeSet<PostprocessFlag>,
    #[serde(default)]
    pub applied_rules: Vec<String>,
    #[serde(default)]
    pub guardrail_term: Option<String>,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
}

impl GenerationRecord {
    pub fn is_flagged(&self) -> bool {
        self.postprocess_flags.contains(&PostprocessFlag::GuardrailFlagged)
    }
}

pub fn generation_id(prompt_hash: &str, model_id: &str, raw: &str) -> String {
    let mut h = Sha256::new();
    for part in [prompt_hash, model_id, raw] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    format!("gen-{}", &hex::encode(h.finalize())[..20])
}

/// Counting semaphore bounding concurrent provider calls.
#[derive(Debug)]
pub struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a>(&'a InFlight);

impl InFlight {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        InFlightPermit(self)
    }

    pub fn in_use(&self) -> usize {
        *self.used.lock().unwrap()
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Provider plus everything applied around a call.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    corrections: CorrectionSet,
    guardrail: Arc<dyn Guardrail>,
    clock: Arc<dyn Clock>,
    in_flight: InFlight,
}

impl Gateway {
    /// Shipped corrections and wordlist; a fixed clock for deterministic
    /// providers, the system clock otherwise.
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        let clock: Arc<dyn Clock> = if provider.is_deterministic() {
            Arc::new(FixedClock::default())
        } else {
            Arc::new(SystemClock)
        };
        Self {
            provider,
            retry: RetryPolicy::default(),
            corrections: CorrectionSet::builtin(),
            guardrail: Arc::new(WordlistGuardrail::builtin()),
            clock,
            in_flight: InFlight::new(DEFAULT_MAX_IN_FLIGHT),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_corrections(mut self, corrections: CorrectionSet) -> Self {
        self.corrections = corrections;
        self
    }

    pub fn with_guardrail(mut self, guardrail: Arc<dyn Guardrail>) -> Self {
        self.guardrail = guardrail;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = InFlight::new(cap);
        self
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn in_flight(&self) -> &InFlight {
        &self.in_flight
    }

    pub fn run(&self, bundle: &PromptBundle) -> Result<GenerationRecord, GenerateError> {
        let raw = {
            let _permit = self.in_flight.acquire();
            let started = Instant::now();
            let raw = generate(bundle, self.provider.as_ref(), &self.retry)?;
            (raw, self.clock.elapsed_ms(started))
        };
        let (raw, latency_ms) = raw;
        if raw.trim().is_empty() {
            return Err(GenerateError::Empty);
        }
        let p = postprocess(&raw, &self.corrections, self.guardrail.as_ref());
        if p.text.is_empty() && !p.flags.contains(&PostprocessFlag::GuardrailFlagged) {
            return Err(GenerateError::Empty);
        }
        let model_id = self.provider.model_id().to_string();
        Ok(GenerationRecord {
            id: generation_id(&bundle.prompt_hash, &model_id, &raw),
            prompt_hash: bundle.prompt_hash.clone(),
            model_id,
            raw_output: raw,
            processed_output: p.text,
            postprocess_flags: p.flags,
            applied_rules: p.applied_rules,
            guardrail_term: match p.guardrail {
                GuardrailVerdict::Flagged(t) => Some(t),
                GuardrailVerdict::Pass => None,
            },
            latency_ms,
            created_at: self.clock.now(),
        })
    }
}
