//! Chat-completion backends behind one [`Provider`] contract.
//!
//! `live` talks HTTP with bounded retries, `record` wraps live and appends
//! every exchange to a transcript, `replay` answers only from a transcript
//! and `scripted` hands out a fixed list of replies. The last two never open
//! a socket.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "GENLARP_LLM_API_KEY";
pub const BASE_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system_text: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Call-site label; not part of the cache key.
    pub tag: String,
}

impl PromptRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Record,
    Replay,
    Scripted,
}

impl std::str::FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "scripted" => Ok(Self::Scripted),
            other => Err(format!("unknown provider mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_ref: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub mode: ProviderMode,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o".into(),
            api_key_ref: API_KEY_ENV.into(),
            timeout_ms: 30_000,
            max_retries: 2,
            mode: ProviderMode::Replay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out after {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("backend error{}: {message}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },
    #[error("no transcript entry for key {key}")]
    CacheMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript error: {0}")]
    Transcript(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        matches!(self, LlmError::Timeout { .. } | LlmError::Backend { .. })
    }
}

/// A chat-completion backend. Implementations are shared across sessions.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, LlmError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Stable content digest over everything but the tag.
pub fn cache_key(request: &PromptRequest) -> String {
    let messages: Vec<[&str; 2]> = request
        .messages
        .iter()
        .map(|m| [m.role.as_str(), m.text.as_str()])
        .collect();
    let body = json!({
        "system_text": request.system_text,
        "messages": messages,
        "temperature": request.temperature,
        "max_output_tokens": request.max_output_tokens,
    });
    let canonical = serde_json::to_string(&body).expect("JSON value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Delay before retry number `attempt` (0-based): 250 ms × 2^attempt.
pub fn backoff_delay(attempt: u32) -> Duration {
    BASE_BACKOFF * 2u32.saturating_pow(attempt)
}

// ---------------------------------------------------------------------------
// Live

/// One HTTP exchange, no retries.
pub trait Transport: Send + Sync {
    fn send(&self, request: &PromptRequest, config: &ProviderConfig) -> Result<PromptResponse, LlmError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: &ProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

/// Body of a `/chat/completions` request.
pub fn chat_completions_body(request: &PromptRequest, model: &str) -> serde_json::Value {
    let mut messages = Vec::with_capacity(request.messages.len() + 1);
    if !request.system_text.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_text}));
    }
    for m in &request.messages {
        messages.push(json!({"role": m.role.as_str(), "content": m.text}));
    }
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

fn parse_chat_completion(body: &serde_json::Value) -> Result<(String, FinishReason), LlmError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::Backend { status: None, message: "response has no choices".into() })?;
    let text = choice
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string();
    let finish = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    if text.is_empty() {
        return Err(LlmError::Backend { status: None, message: "empty completion".into() });
    }
    Ok((text, finish))
}

impl Transport for HttpTransport {
    fn send(&self, request: &PromptRequest, config: &ProviderConfig) -> Result<PromptResponse, LlmError> {
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        let body = chat_completions_body(request, &config.model_name);
        let key = std::env::var(&config.api_key_ref).unwrap_or_default();
        let started = Instant::now();
        let result = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout { timeout_ms: config.timeout_ms }),
            Err(e) => return Err(LlmError::Backend { status: None, message: e.to_string() }),
        };
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let message = response.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Backend { status: Some(status), message });
        }
        let json: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Backend { status: Some(status), message: e.to_string() })?;
        let (text, finish_reason) = parse_chat_completion(&json)?;
        Ok(PromptResponse {
            text,
            finish_reason,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

/// Live backend: at most `1 + max_retries` attempts with jitter-free
/// exponential backoff.
pub struct LiveProvider {
    config: ProviderConfig,
    transport: Box<dyn Transport>,
    sleep: Sleeper,
}

impl LiveProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let transport = Box::new(HttpTransport::new(&config));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: ProviderConfig, transport: Box<dyn Transport>) -> Self {
        Self { config, transport, sleep: Box::new(std::thread::sleep) }
    }

    /// Replaces the sleep function; tests use this to observe the backoff schedule.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }
}

impl Provider for LiveProvider {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, LlmError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            match self.transport.send(request, &self.config) {
                Ok(r) => return Ok(r),
                Err(e) if e.retryable() && attempt < self.config.max_retries => {
                    (self.sleep)(backoff_delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transcripts

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub key: String,
    pub request_tag: String,
    pub response_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

impl TranscriptRecord {
    pub fn new(request: &PromptRequest, response: &PromptResponse) -> Self {
        Self {
            key: cache_key(request),
            request_tag: request.tag.clone(),
            response_text: response.text.clone(),
            finish_reason: response.finish_reason,
            latency_ms: response.latency_ms,
        }
    }

    fn response(&self) -> PromptResponse {
        PromptResponse {
            text: self.response_text.clone(),
            finish_reason: self.finish_reason,
            latency_ms: self.latency_ms,
        }
    }
}

/// Reads a newline-delimited transcript. Blank lines are skipped.
pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, LlmError> {
    let file = File::open(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| LlmError::Transcript(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Appends records to a transcript file through a single writer.
pub struct TranscriptWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl TranscriptWriter {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<(), LlmError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("transcript lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", self.path.display())))
    }
}

/// Delegates to an inner provider and records every successful exchange.
pub struct RecordingProvider<P> {
    inner: P,
    writer: TranscriptWriter,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P, writer: TranscriptWriter) -> Self {
        Self { inner, writer }
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, LlmError> {
        let response = self.inner.complete(request)?;
        self.writer.append(&TranscriptRecord::new(request, &response))?;
        Ok(response)
    }
}

/// Answers from a transcript. Repeated keys are served in recorded order;
/// once a key's entries run out its last entry is repeated.
pub struct ReplayProvider {
    entries: Mutex<HashMap<String, (Vec<PromptResponse>, usize)>>,
}

impl ReplayProvider {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut entries: HashMap<String, (Vec<PromptResponse>, usize)> = HashMap::new();
        for r in records {
            entries.entry(r.key.clone()).or_default().0.push(r.response());
        }
        Self { entries: Mutex::new(entries) }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::from_records(load_transcript(path)?))
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, LlmError> {
        let key = cache_key(request);
        let mut entries = self.entries.lock().expect("replay lock");
        let (responses, cursor) = entries
            .get_mut(&key)
            .ok_or(LlmError::CacheMiss { key: key.clone() })?;
        let idx = (*cursor).min(responses.len() - 1);
        *cursor += 1;
        Ok(responses[idx].clone())
    }
}

/// Returns the scripted replies in order regardless of the request, then
/// fails with a backend error.
pub struct ScriptedProvider {
    script: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            script: Mutex::new(responses.into_iter().map(Into::into).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `complete` calls so far, including failed ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, _request: &PromptRequest) -> Result<PromptResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.script.lock().expect("script lock").pop_front() {
            Some(text) if !text.is_empty() => Ok(PromptResponse {
                text,
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
            }),
            Some(_) => Err(LlmError::Backend { status: None, message: "scripted empty response".into() }),
            None => Err(LlmError::Backend { status: None, message: "script exhausted".into() }),
        }
    }
}

/// Builds the provider named by `config.mode`.
///
/// `record` and `replay` need a transcript path; `scripted` reads a JSON array
/// of reply strings from the same path.
pub fn build_provider(config: &ProviderConfig, transcript: Option<&Path>) -> Result<Arc<dyn Provider>, LlmError> {
    let need_path = || {
        transcript.ok_or_else(|| LlmError::Transcript(format!("{:?} mode needs a transcript path", config.mode)))
    };
    Ok(match config.mode {
        ProviderMode::Live => Arc::new(LiveProvider::new(config.clone())),
        ProviderMode::Record => {
            let writer = TranscriptWriter::open(need_path()?)?;
            Arc::new(RecordingProvider::new(LiveProvider::new(config.clone()), writer))
        }
        ProviderMode::Replay => Arc::new(ReplayProvider::load(need_path()?)?),
        ProviderMode::Scripted => {
            let path = need_path()?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
            let script: Vec<String> = serde_json::from_str(&text)
                .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
            Arc::new(ScriptedProvider::new(script))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn request(text: &str) -> PromptRequest {
        PromptRequest {
            system_text: "sys".into(),
            messages: vec![ChatMessage::user(text)],
            temperature: 0.2,
            max_output_tokens: 64,
            tag: "test".into(),
        }
    }

    #[test]
    fn tag_is_excluded_from_key() {
        let a = request("hello");
        let mut b = a.clone();
        b.tag = "other".into();
        assert_eq!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn key_depends_on_temperature_and_tokens() {
        let a = request("hello");
        let mut b = a.clone();
        b.temperature = 0.3;
        let mut c = a.clone();
        c.max_output_tokens = 65;
        assert_ne!(cache_key(&a), cache_key(&b));
        assert_ne!(cache_key(&a), cache_key(&c));
    }

    #[test]
    fn key_is_stable_across_platforms() {
        // sha256 of the sorted-key compact JSON, computed outside Rust
        assert_eq!(
            cache_key(&request("hello")),
            "affe22a11e86f2c9d3b5b1c34321b74f1c426c626cbc4718e4d1340e72b2b239"
        );
    }

    #[test]
    fn scripted_in_order_then_exhausted() {
        let p = ScriptedProvider::new(["a", "b"]);
        assert_eq!(p.complete(&request("x")).unwrap().text, "a");
        assert_eq!(p.complete(&request("y")).unwrap().text, "b");
        assert!(matches!(p.complete(&request("z")), Err(LlmError::Backend { .. })));
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn replay_hit_and_miss() {
        let req = request("hello");
        let rec = TranscriptRecord {
            key: cache_key(&req),
            request_tag: "t".into(),
            response_text: "world".into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 42,
        };
        let p = ReplayProvider::from_records([rec]);
        let r = p.complete(&req).unwrap();
        assert_eq!(r.text, "world");
        assert_eq!(r.latency_ms, 42);
        assert!(matches!(p.complete(&request("other")), Err(LlmError::CacheMiss { .. })));
    }

    #[test]
    fn replay_serves_repeated_keys_in_order() {
        let req = request("same");
        let mk = |t: &str| TranscriptRecord {
            key: cache_key(&req),
            request_tag: String::new(),
            response_text: t.into(),
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        };
        let p = ReplayProvider::from_records([mk("one"), mk("two")]);
        assert_eq!(p.complete(&req).unwrap().text, "one");
        assert_eq!(p.complete(&req).unwrap().text, "two");
        assert_eq!(p.complete(&req).unwrap().text, "two");
    }

    struct Flaky {
        failures: Mutex<u32>,
        calls: AtomicUsize,
    }

    impl Transport for Flaky {
        fn send(&self, _: &PromptRequest, _: &ProviderConfig) -> Result<PromptResponse, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut f = self.failures.lock().unwrap();
            if *f > 0 {
                *f -= 1;
                Err(LlmError::Backend { status: Some(503), message: "busy".into() })
            } else {
                Ok(PromptResponse { text: "ok".into(), finish_reason: FinishReason::Stop, latency_ms: 1 })
            }
        }
    }

    fn live_with(failures: u32) -> (LiveProvider, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let p = LiveProvider::with_transport(
            ProviderConfig { mode: ProviderMode::Live, ..Default::default() },
            Box::new(Flaky { failures: Mutex::new(failures), calls: AtomicUsize::new(0) }),
        )
        .with_sleeper(move |d| log.lock().unwrap().push(d));
        (p, slept)
    }

    #[test]
    fn live_retries_with_backoff() {
        let (p, slept) = live_with(2);
        assert_eq!(p.complete(&request("x")).unwrap().text, "ok");
        assert_eq!(*slept.lock().unwrap(), vec![Duration::from_millis(250), Duration::from_millis(500)]);
    }

    #[test]
    fn live_gives_up_after_max_retries() {
        let (p, slept) = live_with(3);
        assert!(matches!(p.complete(&request("x")), Err(LlmError::Backend { status: Some(503), .. })));
        assert_eq!(slept.lock().unwrap().len(), 2);
    }

    #[test]
    fn invalid_request_rejected_before_sending() {
        let (p, slept) = live_with(0);
        let mut req = request("x");
        req.temperature = 2.5;
        assert!(matches!(p.complete(&req), Err(LlmError::InvalidRequest(_))));
        req.temperature = 0.2;
        req.messages.clear();
        assert!(matches!(p.complete(&req), Err(LlmError::InvalidRequest(_))));
        assert!(slept.lock().unwrap().is_empty());
    }

    #[test]
    fn backoff_schedule() {
        assert_eq!(backoff_delay(0), Duration::from_millis(250));
        assert_eq!(backoff_delay(3), Duration::from_millis(2000));
    }

    #[test]
    fn chat_body_shape() {
        let body = chat_completions_body(&request("hi"), "m");
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hi");
        assert_eq!(body["max_tokens"], 64);
    }
}
