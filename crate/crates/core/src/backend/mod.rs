//! Chat-completion contract shared by the remote HTTP endpoint and the
//! deterministic scripted backend.
//!
//! Callers tag every request with a [`CallSite`] and a compact probe key.
//! The ledger counts calls per site; the probe lets scripted backends route
//! requests without depending on the full prompt text.

mod envelope;
mod http;
mod ledger;
mod scripted;

use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use envelope::extract_json_object;
pub use http::{HttpBackend, HttpConfig, RetryPolicy, API_KEY_ENV};
pub use ledger::{diff_counts, CallCounts, CallLedger, LedgerSnapshot, SiteStats};
pub use scripted::{ScriptEntry, ScriptMode, ScriptedBackend};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for probe `{0}`")]
    UnscriptedPrompt(String),
    #[error("ambiguous script: {0}")]
    AmbiguousScript(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture {path}: {reason}")]
    Fixture { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling parameters. Defaults: temperature 0.7, top_p 0.8, top_k 20.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: Option<u32>,
    pub max_tokens: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.8,
            top_k: Some(20),
            max_tokens: None,
            seed: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == Some(0) || self.max_tokens == Some(0) {
            return Err(BackendError::InvalidRequest(
                "top_k and max_tokens must be positive when set".into(),
            ));
        }
        Ok(())
    }
}

/// Where in the pipeline an LLM call originates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallSite {
    InitialGeneration,
    ActionIdentification,
    ActionExecution,
    Rewrite,
    Judge,
}

impl CallSite {
    pub const ALL: [CallSite; 5] = [
        CallSite::InitialGeneration,
        CallSite::ActionIdentification,
        CallSite::ActionExecution,
        CallSite::Rewrite,
        CallSite::Judge,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub site: CallSite,
    /// Routing key, e.g. `sample-3/identify:turn10:step1`.
    pub probe: String,
    pub messages: Vec<ChatMessage>,
    pub sampling: SamplingConfig,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("messages must not be empty".into()));
        }
        for m in &self.messages {
            if m.role != Role::System && m.content.trim().is_empty() {
                return Err(BackendError::InvalidRequest(format!(
                    "{:?} message with empty content",
                    m.role
                )));
            }
        }
        self.sampling.validate()
    }

    /// Probe followed by every message body; what pattern scripts match on.
    pub fn haystack(&self) -> String {
        let mut s = self.probe.clone();
        for m in &self.messages {
            s.push('\n');
            s.push_str(&m.content);
        }
        s
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Adapts a closure into a backend. Handy for programmatic test doubles.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.0)(request)
    }
}

pub const JSON_REPROMPT: &str =
    "Your previous reply could not be used. Respond with JSON only, exactly in the requested format.";

/// A reply that parsed as JSON but failed validation, or did not parse.
#[derive(Debug, thiserror::Error)]
pub enum EnvelopeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{reason} (reply: {reply:?})")]
    Invalid { reason: String, reply: String },
}

/// A backend bound to sampling settings and one or more ledgers.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    sampling: SamplingConfig,
    ledgers: Vec<Arc<CallLedger>>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, sampling: SamplingConfig) -> Self {
        Self {
            backend,
            sampling,
            ledgers: vec![Arc::new(CallLedger::new())],
        }
    }

    /// Additional ledger that also receives every call (e.g. a run-wide one).
    pub fn with_ledger(mut self, ledger: Arc<CallLedger>) -> Self {
        self.ledgers.push(ledger);
        self
    }

    /// Same backend and sampling, fresh primary ledger; extra ledgers kept.
    pub fn fork(&self) -> Self {
        let mut ledgers = self.ledgers.clone();
        ledgers[0] = Arc::new(CallLedger::new());
        Self {
            backend: Arc::clone(&self.backend),
            sampling: self.sampling.clone(),
            ledgers,
        }
    }

    pub fn ledger(&self) -> &Arc<CallLedger> {
        &self.ledgers[0]
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }

    pub fn complete(
        &self,
        site: CallSite,
        probe: impl Into<String>,
        messages: Vec<ChatMessage>,
    ) -> Result<String, BackendError> {
        let request = ChatRequest {
            site,
            probe: probe.into(),
            messages,
            sampling: self.sampling.clone(),
        };
        request.validate()?;
        let started = Instant::now();
        let out = self.backend.complete(&request);
        let elapsed = started.elapsed();
        for l in &self.ledgers {
            l.record(site, elapsed);
        }
        out
    }

    /// Asks for a JSON object, validates it with `accept`, and on failure
    /// reprompts exactly once before giving up.
    pub fn complete_json<T, U>(
        &self,
        site: CallSite,
        probe: &str,
        messages: Vec<ChatMessage>,
        accept: impl Fn(T) -> Result<U, String>,
    ) -> Result<U, EnvelopeError>
    where
        T: DeserializeOwned,
    {
        self.complete_parsed(site, probe, messages, |reply| {
            let value = extract_json_object(reply).ok_or("no JSON object in reply")?;
            let typed: T = serde_json::from_value(value).map_err(|e| e.to_string())?;
            accept(typed)
        })
    }

    /// Like [`complete_json`](Self::complete_json) but with a parser over the
    /// raw reply text. The single retry carries the probe suffixed with
    /// `:retry` and tells the model why its reply was rejected.
    pub fn complete_parsed<U>(
        &self,
        site: CallSite,
        probe: &str,
        messages: Vec<ChatMessage>,
        parse: impl Fn(&str) -> Result<U, String>,
    ) -> Result<U, EnvelopeError> {
        let first = self.complete(site, probe, messages.clone())?;
        let reason = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(reason) => reason,
        };
        log::debug!("{probe}: rejected reply ({reason}); reprompting");
        let mut retry = messages;
        retry.push(ChatMessage::assistant(if first.trim().is_empty() {
            "(empty)".to_string()
        } else {
            first
        }));
        retry.push(ChatMessage::user(format!("{JSON_REPROMPT}\nProblem: {reason}")));
        let second = self.complete(site, format!("{probe}:retry"), retry)?;
        parse(&second).map_err(|reason| EnvelopeError::Invalid { reason, reply: second })
    }
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("sampling", &self.sampling)
            .field("ledgers", &self.ledgers.len())
            .finish()
    }
}
