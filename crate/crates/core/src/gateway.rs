//! Chat-completion gateway.
//!
//! [`HttpBackend`] speaks the common chat-completions wire shape with bounded
//! retries. [`TranscriptBackend`] records responses keyed by a canonical
//! request digest and replays them without touching the network, which is how
//! every pipeline stage runs offline and reproducibly.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::text::sha256_hex;

pub const MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

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
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Task provenance; excluded from the digest.
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        CompletionRequest { model: model.into(), messages, temperature: 0.0, max_tokens: 1024, request_tag: String::new() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.model.trim().is_empty() {
            return bad("model is empty");
        }
        match self.messages.last() {
            None => return bad("no messages"),
            Some(m) if m.role != Role::User => return bad("last message must have role user"),
            _ => {}
        }
        if self.messages.iter().any(|m| m.role != Role::Assistant && m.content.trim().is_empty()) {
            return bad("system and user messages must be non-empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be finite and >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("bad request ({status}): {message}")]
    BadRequest { status: u16, message: String },
    #[error("no recorded response for request digest {0}")]
    ReplayMiss(String),
    #[error("transcript: {0}")]
    Transcript(String),
}

/// Digest over `(model, messages, temperature, max_tokens)` serialized as JSON
/// with sorted keys. The request tag is provenance only and does not count.
pub fn canonical_digest(req: &CompletionRequest) -> String {
    // serde_json::Value maps are BTreeMaps, so keys serialize sorted.
    let canonical = json!({
        "max_tokens": req.max_tokens,
        "messages": req.messages.iter().map(|m| json!({"content": m.content, "role": m.role})).collect::<Vec<_>>(),
        "model": req.model,
        "temperature": req.temperature,
    });
    sha256_hex(serde_json::to_string(&canonical).expect("json value serializes"))
}

/// Anything that can answer a completion request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
    fn backend_id(&self) -> String;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(req)
    }

    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: MAX_ATTEMPTS, base_delay: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

/// HTTP chat-completions client. Retries transport errors and 5xx responses
/// with exponential backoff; 4xx responses fail immediately.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
    policy: RetryPolicy,
    attempts: AtomicUsize,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("policy", &self.policy)
            .finish()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    /// `base_url` is the API root (e.g. `http://host:8000/v1`); requests go to
    /// `{base_url}/chat/completions`.
    pub fn new(base_url: &str, token: Option<String>, policy: RetryPolicy, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        Ok(HttpBackend { client, url, token, policy, attempts: AtomicUsize::new(0) })
    }

    /// Network attempts made so far, across all calls.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<CompletionResponse, (GatewayError, bool)> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let started = Instant::now();
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(t) = &self.token {
            builder = builder.bearer_auth(t);
        }
        let resp = builder
            .send()
            .map_err(|e| (GatewayError::BackendUnavailable(e.without_url().to_string()), true))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err((GatewayError::BackendUnavailable(format!("server returned {status}")), true));
        }
        if status.is_client_error() {
            let message = resp.text().unwrap_or_default().chars().take(500).collect();
            return Err((GatewayError::BadRequest { status: status.as_u16(), message }, false));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| (GatewayError::BackendUnavailable(format!("undecodable response: {}", e.without_url())), true))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| (GatewayError::BackendUnavailable("response has no choices".into()), true))?;
        let text = choice.message.content.unwrap_or_default();
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None if !text.is_empty() => FinishReason::Stop,
            _ => FinishReason::Error,
        };
        Ok(CompletionResponse {
            text,
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
            backend_id: self.backend_id(),
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(req) {
                Ok(r) => return Ok(r),
                Err((e, retryable)) => {
                    if !retryable || attempt >= self.policy.max_attempts {
                        tracing::warn!(attempt, error = %e, "completion failed");
                        return Err(e);
                    }
                    tracing::debug!(attempt, error = %e, "retrying completion");
                    std::thread::sleep(self.policy.delay(attempt));
                }
            }
        }
    }

    fn backend_id(&self) -> String {
        format!("http:{}", self.url)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptMode {
    Record,
    Replay,
    Passthrough,
}

impl std::str::FromStr for TranscriptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(TranscriptMode::Record),
            "replay" => Ok(TranscriptMode::Replay),
            "passthrough" => Ok(TranscriptMode::Passthrough),
            other => Err(format!("unknown transcript mode `{other}`")),
        }
    }
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub response: CompletionResponse,
}

/// Digest → response map, optionally backed by an append-only JSONL file.
#[derive(Debug, Default)]
pub struct Transcript {
    entries: RwLock<HashMap<String, CompletionResponse>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Transcript::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Transcript {
            entries: RwLock::new(entries.into_iter().map(|e| (e.digest, e.response)).collect()),
            sink: None,
            path: None,
        }
    }

    /// Reads a transcript file. A missing file yields an empty transcript.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| GatewayError::Transcript(e.to_string()))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| GatewayError::Transcript(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: TranscriptEntry = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Transcript(format!("{}:{}: {e}", path.display(), i + 1)))?;
                entries.insert(e.digest, e.response);
            }
        }
        Ok(Transcript { entries: RwLock::new(entries), sink: None, path: Some(path.to_path_buf()) })
    }

    /// Like [`Transcript::load`], then opens the file for appending new entries.
    pub fn open_for_record(path: &Path) -> Result<Self, GatewayError> {
        let mut t = Transcript::load(path)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| GatewayError::Transcript(e.to_string()))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Transcript(e.to_string()))?;
        t.sink = Some(Mutex::new(f));
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<CompletionResponse> {
        self.entries.read().get(digest).cloned()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Inserts an entry, appending it to the backing file when one is open.
    /// Writes are serialized.
    pub fn insert(&self, digest: String, response: CompletionResponse) -> Result<(), GatewayError> {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&TranscriptEntry { digest: digest.clone(), response: response.clone() })
                .expect("entry serializes");
            let mut f = sink.lock();
            writeln!(f, "{line}").map_err(|e| GatewayError::Transcript(e.to_string()))?;
            f.flush().map_err(|e| GatewayError::Transcript(e.to_string()))?;
        }
        self.entries.write().insert(digest, response);
        Ok(())
    }

    /// Entries sorted by digest.
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        let mut v: Vec<_> = self
            .entries
            .read()
            .iter()
            .map(|(d, r)| TranscriptEntry { digest: d.clone(), response: r.clone() })
            .collect();
        v.sort_by(|a, b| a.digest.cmp(&b.digest));
        v
    }
}

/// Backend wrapper that records, replays, or passes requests through.
/// In replay mode the inner backend is never called.
pub struct TranscriptBackend {
    mode: TranscriptMode,
    transcript: Arc<Transcript>,
    inner: Option<Arc<dyn ChatBackend>>,
}

impl TranscriptBackend {
    pub fn replay(transcript: Arc<Transcript>) -> Self {
        TranscriptBackend { mode: TranscriptMode::Replay, transcript, inner: None }
    }

    pub fn record(transcript: Arc<Transcript>, inner: Arc<dyn ChatBackend>) -> Self {
        TranscriptBackend { mode: TranscriptMode::Record, transcript, inner: Some(inner) }
    }

    pub fn with_mode(mode: TranscriptMode, transcript: Arc<Transcript>, inner: Option<Arc<dyn ChatBackend>>) -> Self {
        TranscriptBackend { mode, transcript, inner }
    }

    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn transcript(&self) -> &Arc<Transcript> {
        &self.transcript
    }

    fn inner(&self) -> Result<&Arc<dyn ChatBackend>, GatewayError> {
        self.inner
            .as_ref()
            .ok_or_else(|| GatewayError::BackendUnavailable("no live backend configured".into()))
    }
}

impl ChatBackend for TranscriptBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        match self.mode {
            TranscriptMode::Replay => {
                let digest = canonical_digest(req);
                self.transcript.get(&digest).ok_or(GatewayError::ReplayMiss(digest))
            }
            TranscriptMode::Record => {
                let resp = self.inner()?.complete(req)?;
                self.transcript.insert(canonical_digest(req), resp.clone())?;
                Ok(resp)
            }
            TranscriptMode::Passthrough => self.inner()?.complete(req),
        }
    }

    fn backend_id(&self) -> String {
        match (&self.mode, &self.inner) {
            (TranscriptMode::Replay, _) | (_, None) => "replay".to_string(),
            (_, Some(inner)) => inner.backend_id(),
        }
    }
}

/// Backend that counts calls and answers from a closure; used to instrument
/// pipelines (e.g. to prove a replay run made no live calls).
pub struct CountingBackend<F> {
    calls: AtomicUsize,
    respond: F,
}

impl<F> CountingBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResponse, GatewayError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        CountingBackend { calls: AtomicUsize::new(0), respond }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> ChatBackend for CountingBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResponse, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(req)
    }

    fn backend_id(&self) -> String {
        "counting".into()
    }
}

/// Bounds concurrent in-flight requests to a backend.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway::with_limit(backend, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_limit(backend: Arc<dyn ChatBackend>, limit: usize) -> Self {
        Gateway { backend, limit: limit.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        {
            let mut n = self.in_flight.lock();
            while *n >= self.limit {
                self.freed.wait(&mut n);
            }
            *n += 1;
        }
        let result = self.backend.complete(req);
        *self.in_flight.lock() -= 1;
        self.freed.notify_one();
        result
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }
}
