//! Backend-neutral model invocation.
//!
//! Every agent call goes through [`Backend::complete`]. Three backends are
//! provided: an OpenAI-compatible HTTP client, a scripted backend for
//! deterministic tests, and a content-addressed replay cache that wraps
//! either.

mod config;
mod fingerprint;
mod http;
mod replay;
mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::ImageRef;

pub use config::{BackendConfig, BackendFactory, BackendKind, BuildError, HttpConfig, RetryConfig};
pub use fingerprint::{canonical_bytes, request_fingerprint};
pub use http::{HttpBackend, RateGate, ReqwestTransport, Transport, TransportError};
pub use replay::{CacheRecord, ReplayBackend, ReplayCache};
pub use scripted::{Script, ScriptEntry, ScriptedBackend};

/// Which agent step issued a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTag {
    Phase1,
    Phase2Type,
    Phase2,
    Phase3,
}

impl PhaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::Phase1 => "phase1",
            PhaseTag::Phase2Type => "phase2_type",
            PhaseTag::Phase2 => "phase2",
            PhaseTag::Phase3 => "phase3",
        }
    }
}

impl fmt::Display for PhaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Segment {
    Text(String),
    Image(ImageRef),
}

/// Routing metadata. Not part of the request fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub phase: PhaseTag,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub segments: Vec<Segment>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<RequestTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 1024 }
    }
}

impl ModelRequest {
    pub fn new(model_id: &str, decoding: Decoding, system_prompt: impl Into<String>) -> Self {
        Self {
            model_id: model_id.to_string(),
            system_prompt: system_prompt.into(),
            segments: Vec::new(),
            temperature: decoding.temperature,
            max_tokens: decoding.max_tokens,
            tag: None,
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.segments.push(Segment::Text(text.into()));
        self
    }

    pub fn image(mut self, image: ImageRef) -> Self {
        self.segments.push(Segment::Image(image));
        self
    }

    pub fn tagged(mut self, phase: PhaseTag, sample_id: &str) -> Self {
        self.tag = Some(RequestTag { phase, sample_id: sample_id.to_string() });
        self
    }

    pub fn image_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Image(_))).count()
    }

    /// System prompt and text segments joined by newlines.
    pub fn full_text(&self) -> String {
        let mut out = self.system_prompt.clone();
        for seg in &self.segments {
            if let Segment::Text(t) = seg {
                out.push('\n');
                out.push_str(t);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if self.segments.is_empty() {
            return bad("request has no segments");
        }
        if self.image_count() > 1 {
            return bad("request carries more than one image");
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return bad("temperature outside [0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {0} with the API key is not set")]
    MissingApiKey(String),
    #[error("no scripted reply for phase {phase} sample {sample_id:?}")]
    ScriptMissing { phase: String, sample_id: String },
    #[error("replay cache: {0}")]
    Cache(String),
    #[error("cannot read image {path}: {message}")]
    Image { path: String, message: String },
}

pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    fn decoding(&self) -> Decoding {
        Decoding::default()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn decoding(&self) -> Decoding {
        (**self).decoding()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(request)
    }
}

/// One backend call as recorded in a sample trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCall {
    pub phase: PhaseTag,
    pub fingerprint: String,
    pub from_cache: bool,
    pub latency_ms: u64,
}

/// Ordered record of the calls made while processing one sample.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallLog {
    pub calls: Vec<BackendCall>,
}

impl CallLog {
    /// Sends `request`, recording the call whether or not it succeeds.
    pub fn complete(
        &mut self,
        backend: &dyn Backend,
        phase: PhaseTag,
        request: &ModelRequest,
    ) -> Result<ModelResponse, BackendError> {
        let result = backend.complete(request);
        let (from_cache, latency_ms) = match &result {
            Ok(r) => (r.from_cache, r.latency_ms),
            Err(_) => (false, 0),
        };
        self.calls.push(BackendCall { phase, fingerprint: request_fingerprint(request), from_cache, latency_ms });
        result
    }

    pub fn count(&self, phase: PhaseTag) -> usize {
        self.calls.iter().filter(|c| c.phase == phase).count()
    }
}
