//! OpenAI-compatible chat-completions client.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};
use thiserror::Error;

use super::{Backend, BackendError, Decoding, FinishReason, HttpConfig, ModelRequest, ModelResponse, Segment};
use crate::data_model::{ImageKind, ImageRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

/// Sends one JSON POST and returns `(status, body)`.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self { client: reqwest::blocking::Client::new() }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), TransportError> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .timeout(timeout)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else if e.is_connect() {
                    TransportError::Connect(e.to_string())
                } else {
                    TransportError::Other(e.to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        Ok((status, text))
    }
}

/// Counting gate bounding the number of in-flight requests.
pub struct RateGate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePermit<'a> {
    gate: &'a RateGate,
}

impl RateGate {
    pub fn new(limit: usize) -> Self {
        Self { limit: limit.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        GatePermit { gate: self }
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.in_flight.lock().expect("gate lock") -= 1;
        self.gate.freed.notify_one();
    }
}

type KeyLookup = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;
type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct HttpBackend {
    config: HttpConfig,
    decoding: Decoding,
    transport: Arc<dyn Transport>,
    gate: RateGate,
    key_lookup: KeyLookup,
    sleep: Sleeper,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, decoding: Decoding, transport: Arc<dyn Transport>) -> Self {
        let gate = RateGate::new(config.rate_limit);
        Self {
            config,
            decoding,
            transport,
            gate,
            key_lookup: Arc::new(|name| std::env::var(name).ok()),
            sleep: Arc::new(std::thread::sleep),
        }
    }

    /// Replaces the environment lookup used to find the API key.
    pub fn with_key_lookup(mut self, lookup: KeyLookup) -> Self {
        self.key_lookup = lookup;
        self
    }

    pub fn with_sleeper(mut self, sleep: Sleeper) -> Self {
        self.sleep = sleep;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt - 1).min(16);
        Duration::from_millis(self.config.retry.backoff_base_ms.saturating_mul(factor))
    }
}

fn image_url(img: &ImageRef) -> Result<String, BackendError> {
    match img.kind {
        ImageKind::Url => Ok(img.value.clone()),
        ImageKind::InlineBase64 => Ok(format!("data:{};base64,{}", img.media_type, img.value.trim())),
        ImageKind::FilePath => {
            let bytes = std::fs::read(&img.value)
                .map_err(|e| BackendError::Image { path: img.value.clone(), message: e.to_string() })?;
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            Ok(format!("data:{};base64,{data}", img.media_type))
        }
    }
}

/// Chat-completions body: an optional system message and one user message
/// whose content parts mirror the request segments.
pub(crate) fn request_body(request: &ModelRequest) -> Result<Value, BackendError> {
    let mut parts = Vec::with_capacity(request.segments.len());
    for seg in &request.segments {
        parts.push(match seg {
            Segment::Text(t) => json!({"type": "text", "text": t}),
            Segment::Image(img) => json!({"type": "image_url", "image_url": {"url": image_url(img)?}}),
        });
    }
    let mut messages = Vec::with_capacity(2);
    if !request.system_prompt.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_prompt}));
    }
    messages.push(json!({"role": "user", "content": parts}));
    Ok(json!({
        "model": request.model_id,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }))
}

pub(crate) fn parse_completion(body: &str) -> Result<(String, FinishReason), BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::BadResponse(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| BackendError::BadResponse("no choices in response".into()))?;
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        None | Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let content = choice.get("message").and_then(|m| m.get("content"));
    let text = match content {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Array(parts)) => Some(
            parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect::<Vec<_>>().join(""),
        ),
        _ => None,
    };
    match (text, finish) {
        (Some(t), f) => Ok((t, f)),
        (None, FinishReason::Stop) => Err(BackendError::BadResponse("stop without message content".into())),
        (None, f) => Ok((String::new(), f)),
    }
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn decoding(&self) -> Decoding {
        self.decoding
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let key = (self.key_lookup)(&self.config.api_key_env)
            .ok_or_else(|| BackendError::MissingApiKey(self.config.api_key_env.clone()))?;
        let body = request_body(request)?;
        let url = self.endpoint();
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            let started = Instant::now();
            let result = {
                let _permit = self.gate.acquire();
                self.transport.post_json(&url, &key, &body, timeout)
            };
            match result {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let (text, finish_reason) = parse_completion(&text)?;
                    return Ok(ModelResponse {
                        text,
                        finish_reason,
                        latency_ms: started.elapsed().as_millis() as u64,
                        from_cache: false,
                    });
                }
                Ok((status @ (401 | 403), text)) => {
                    return Err(BackendError::Auth { status, message: text });
                }
                Ok((status, text)) if status == 429 || (500..600).contains(&status) => {
                    tracing::warn!(status, attempt, "retryable HTTP status");
                    last = format!("HTTP {status}: {text}");
                }
                Ok((status, text)) => return Err(BackendError::Status { status, body: text }),
                Err(e) => {
                    tracing::warn!(error = %e, attempt, "transport error");
                    last = e.to_string();
                }
            }
            if attempt < max_attempts {
                (self.sleep)(self.backoff(attempt));
            }
        }
        Err(BackendError::Transport { attempts: max_attempts, last })
    }
}
