//! Chat-completions client.
//!
//! [`LlmClient`] owns retry and fan-out; the wire is behind [`ChatTransport`]
//! so the HTTP endpoint and the in-process mocks share one code path.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::prompt::PromptBundle;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("response has no completion text")]
    MissingText,
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LlmError {
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("response has no completion text")]
    MissingText,
    #[error("request failed: {0}")]
    Fatal(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    #[default]
    Predict,
    Explain,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub query_id: u64,
    pub kind: RequestKind,
    pub system: String,
    pub user: String,
}

impl ChatRequest {
    pub fn predict(bundle: &PromptBundle) -> Self {
        Self {
            query_id: bundle.query_id,
            kind: RequestKind::Predict,
            system: bundle.system.clone(),
            user: bundle.user_message(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub query_id: u64,
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;

    /// Stable identity recorded in run manifests.
    fn identity(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. No key is sent
    /// when unset.
    pub api_key_env: Option<String>,
    pub max_parallel: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
    pub transcript: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            max_parallel: 8,
            timeout_secs: 120,
            max_retries: 3,
            temperature: 0.0,
            max_tokens: 256,
            backoff_ms: 500,
            transcript: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_parallel == 0 {
            return Err(LlmError::Config("max_parallel must be at least 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(LlmError::Config("base_url is empty".into()));
        }
        Ok(())
    }
}

/// `POST {base_url}/chat/completions` with a system and a user message.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    max_tokens: u32,
}

impl HttpTransport {
    pub fn new(config: &EndpointConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

/// Pull `choices[0].message.content` out of a response body.
pub fn extract_completion_text(body: &serde_json::Value) -> Option<String> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_owned)
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut builder = self.client.post(&self.url).json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(TransportError::Auth(status.to_string()));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(TransportError::Transient(status.to_string()));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(TransportError::Fatal(format!("{status}: {body}")));
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| TransportError::Transient(format!("unreadable body: {e}")))?;
        extract_completion_text(&body).ok_or(TransportError::MissingText)
    }

    fn identity(&self) -> String {
        format!("http:{}#{}", self.url, self.model)
    }
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    query_id: u64,
    kind: RequestKind,
    system: &'a str,
    user: &'a str,
    attempt_count: u32,
    latency_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Retrying, concurrency-bounded front end over a transport.
pub struct LlmClient {
    transport: Arc<dyn ChatTransport>,
    max_parallel: usize,
    max_retries: u32,
    backoff: Duration,
    transcript: Option<Mutex<BufWriter<File>>>,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn ChatTransport>) -> Self {
        Self {
            transport,
            max_parallel: 1,
            max_retries: 0,
            backoff: Duration::from_millis(0),
            transcript: None,
        }
    }

    pub fn http(config: &EndpointConfig) -> Result<Self, LlmError> {
        let transport = Arc::new(HttpTransport::new(config)?);
        let mut client = Self::new(transport)
            .with_max_parallel(config.max_parallel)
            .with_retries(config.max_retries, Duration::from_millis(config.backoff_ms));
        if let Some(path) = &config.transcript {
            let file = File::create(path).map_err(|e| LlmError::Config(e.to_string()))?;
            client.transcript = Some(Mutex::new(BufWriter::new(file)));
        }
        Ok(client)
    }

    pub fn with_max_parallel(mut self, max_parallel: usize) -> Self {
        self.max_parallel = max_parallel.max(1);
        self
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    pub fn identity(&self) -> String {
        self.transport.identity()
    }

    pub fn complete_bundle(&self, bundle: &PromptBundle) -> Result<Completion, LlmError> {
        self.complete(&ChatRequest::predict(bundle))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let start = Instant::now();
        let mut attempt: u32 = 0;
        let result = loop {
            attempt += 1;
            match self.transport.send(request) {
                Ok(text) => break Ok(text),
                Err(TransportError::Transient(msg)) => {
                    if attempt > self.max_retries {
                        break Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            last: msg,
                        });
                    }
                    let delay = self.backoff.saturating_mul(1 << (attempt - 1).min(16));
                    log::debug!("query {} attempt {attempt} failed: {msg}; retrying in {delay:?}", request.query_id);
                    std::thread::sleep(delay);
                }
                Err(TransportError::Auth(msg)) => break Err(LlmError::Auth(msg)),
                Err(TransportError::MissingText) => break Err(LlmError::MissingText),
                Err(TransportError::Fatal(msg)) => break Err(LlmError::Fatal(msg)),
            }
        };
        let latency_ms = start.elapsed().as_millis() as u64;
        self.log_transcript(request, attempt, latency_ms, &result);
        result.map(|text| Completion {
            query_id: request.query_id,
            text,
            latency_ms,
            attempt_count: attempt,
        })
    }

    fn log_transcript(
        &self,
        request: &ChatRequest,
        attempt_count: u32,
        latency_ms: u64,
        result: &Result<String, LlmError>,
    ) {
        let Some(sink) = &self.transcript else { return };
        let line = TranscriptLine {
            query_id: request.query_id,
            kind: request.kind,
            system: &request.system,
            user: &request.user,
            attempt_count,
            latency_ms,
            response: result.as_ref().ok().map(String::as_str),
            error: result.as_ref().err().map(ToString::to_string),
        };
        let mut sink = sink.lock().expect("transcript lock poisoned");
        if serde_json::to_writer(&mut *sink, &line).is_ok() {
            let _ = sink.write_all(b"\n");
            let _ = sink.flush();
        }
    }

    /// Complete every request with at most `max_parallel` in flight. The
    /// output is in input order; failures are returned in place.
    pub fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<Completion, LlmError>> {
        let workers = self.max_parallel.min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Completion, LlmError>>>> =
            Mutex::new(vec![None; requests.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(request) = requests.get(i) else { break };
                    let result = self.complete(request);
                    slots.lock().expect("slot lock poisoned")[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock poisoned")
            .into_iter()
            .map(|slot| slot.expect("every slot filled"))
            .collect()
    }
}
