//! Append-only JSON-lines response cache keyed by request fingerprint.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{request_fingerprint, Backend, BackendError, Decoding, FinishReason, ModelRequest, ModelResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub fingerprint: String,
    pub response_text: String,
    pub model_id: String,
    pub timestamp: String,
}

pub struct ReplayCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheRecord>>,
    writer: Mutex<File>,
}

impl ReplayCache {
    /// Loads existing records (later lines win) and opens the file for
    /// appending, creating it if needed.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let cache_err = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(cache_err)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(cache_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    BackendError::Cache(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                entries.insert(record.fingerprint.clone(), record);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path).map_err(cache_err)?;
        Ok(Self { path: path.to_path_buf(), entries: RwLock::new(entries), writer: Mutex::new(writer) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<CacheRecord> {
        self.entries.read().expect("cache lock").get(fingerprint).cloned()
    }

    pub fn insert(&self, record: CacheRecord) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(&record).map_err(|e| BackendError::Cache(e.to_string()))?;
        line.push('\n');
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            w.write_all(line.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| BackendError::Cache(format!("{}: {e}", self.path.display())))?;
        }
        self.entries.write().expect("cache lock").insert(record.fingerprint.clone(), record);
        Ok(())
    }
}

pub struct ReplayBackend {
    inner: Arc<dyn Backend>,
    cache: Arc<ReplayCache>,
}

impl ReplayBackend {
    pub fn new(inner: Arc<dyn Backend>, cache: Arc<ReplayCache>) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }
}

impl Backend for ReplayBackend {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn decoding(&self) -> Decoding {
        self.inner.decoding()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let fingerprint = request_fingerprint(request);
        if let Some(hit) = self.cache.get(&fingerprint) {
            return Ok(ModelResponse {
                text: hit.response_text,
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
                from_cache: true,
            });
        }
        let response = self.inner.complete(request)?;
        if response.finish_reason == FinishReason::Stop {
            self.cache.insert(CacheRecord {
                fingerprint,
                response_text: response.text.clone(),
                model_id: request.model_id.clone(),
                timestamp: chrono::Utc::now().to_rfc3339(),
            })?;
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{PhaseTag, Script, ScriptEntry, ScriptedBackend};

    fn req(text: &str) -> ModelRequest {
        ModelRequest::new("scripted", Decoding::default(), "sys").text(text).tagged(PhaseTag::Phase1, "s")
    }

    #[test]
    fn miss_then_hit_then_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let scripted = Arc::new(ScriptedBackend::new(Script {
            entries: vec![ScriptEntry::new("*", "*", &["first", "second"])],
            ..Script::default()
        }));
        let replay = ReplayBackend::new(scripted.clone(), Arc::new(ReplayCache::open(&path).unwrap()));
        let a = replay.complete(&req("q")).unwrap();
        assert_eq!((a.text.as_str(), a.from_cache), ("first", false));
        let b = replay.complete(&req("q")).unwrap();
        assert_eq!((b.text.as_str(), b.from_cache, b.latency_ms), ("first", true, 0));
        assert_eq!(scripted.calls(), 1);

        let reopened = ReplayCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get(&request_fingerprint(&req("q"))).unwrap().response_text, "first");
    }

    #[test]
    fn last_writer_wins_on_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let cache = ReplayCache::open(&path).unwrap();
        for text in ["old", "new"] {
            cache
                .insert(CacheRecord {
                    fingerprint: "f".into(),
                    response_text: text.into(),
                    model_id: "m".into(),
                    timestamp: "t".into(),
                })
                .unwrap();
        }
        assert_eq!(ReplayCache::open(&path).unwrap().get("f").unwrap().response_text, "new");
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{oops\n").unwrap();
        let err = ReplayCache::open(&path).err().unwrap();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
