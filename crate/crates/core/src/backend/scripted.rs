//! Deterministic backend driven by a JSON script.
//!
//! ```json
//! {
//!   "model_id": "scripted",
//!   "fingerprints": { "<sha256>": "reply" },
//!   "entries": [
//!     { "phase": "phase1", "sample_id": "*", "replies": ["CONSISTENT"] },
//!     { "phase": "phase3", "sample_id": "s03", "contains": "Triangle(",
//!       "replies": ["garbage", "Error Step: 2\nError Category: CAL"] }
//!   ]
//! }
//! ```
//!
//! A fingerprint override wins. Otherwise the first entry whose phase,
//! sample id and `contains` filter all match is used; `"*"` matches any
//! phase or sample. Successive calls for the same entry and sample walk the
//! reply list and then repeat its last element.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{request_fingerprint, Backend, BackendError, Decoding, FinishReason, ModelRequest, ModelResponse};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fingerprints: BTreeMap<String, String>,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default = "wildcard")]
    pub phase: String,
    #[serde(default = "wildcard")]
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub replies: Vec<String>,
}

fn wildcard() -> String {
    "*".to_string()
}

impl ScriptEntry {
    pub fn new(phase: &str, sample_id: &str, replies: &[&str]) -> Self {
        Self {
            phase: phase.to_string(),
            sample_id: sample_id.to_string(),
            contains: None,
            replies: replies.iter().map(|r| r.to_string()).collect(),
        }
    }

    pub fn containing(mut self, needle: &str) -> Self {
        self.contains = Some(needle.to_string());
        self
    }

    fn matches(&self, phase: &str, sample_id: &str, text: &str) -> bool {
        (self.phase == "*" || self.phase == phase)
            && (self.sample_id == "*" || self.sample_id == sample_id)
            && self.contains.as_deref().is_none_or(|needle| text.contains(needle))
    }
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub struct ScriptedBackend {
    script: Script,
    model_id: String,
    decoding: Decoding,
    cursors: Mutex<HashMap<(usize, String), usize>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let model_id = script.model_id.clone().unwrap_or_else(|| "scripted".to_string());
        Self { script, model_id, decoding: Decoding::default(), cursors: Mutex::new(HashMap::new()), calls: AtomicUsize::new(0) }
    }

    pub fn with_model_id(mut self, model_id: &str) -> Self {
        self.model_id = model_id.to_string();
        self
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    /// Requests answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply_for(&self, request: &ModelRequest) -> Result<String, BackendError> {
        if !self.script.fingerprints.is_empty() {
            if let Some(reply) = self.script.fingerprints.get(&request_fingerprint(request)) {
                return Ok(reply.clone());
            }
        }
        let (phase, sample_id) = match &request.tag {
            Some(tag) => (tag.phase.as_str(), tag.sample_id.as_str()),
            None => ("", ""),
        };
        let text = request.full_text();
        let missing = || BackendError::ScriptMissing { phase: phase.to_string(), sample_id: sample_id.to_string() };
        let index = self
            .script
            .entries
            .iter()
            .position(|e| e.matches(phase, sample_id, &text))
            .ok_or_else(missing)?;
        let entry = &self.script.entries[index];
        if entry.replies.is_empty() {
            return Err(missing());
        }
        let mut cursors = self.cursors.lock().expect("script cursor lock");
        let cursor = cursors.entry((index, sample_id.to_string())).or_insert(0);
        let reply = entry.replies[(*cursor).min(entry.replies.len() - 1)].clone();
        *cursor += 1;
        Ok(reply)
    }
}

impl Backend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn decoding(&self) -> Decoding {
        self.decoding
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let text = self.reply_for(request)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ModelResponse { text, finish_reason: FinishReason::Stop, latency_ms: 0, from_cache: false })
    }
}
