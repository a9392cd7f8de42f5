use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, Decoding, HttpBackend, ReplayBackend, ReplayCache, ReqwestTransport, Script, ScriptedBackend, Transport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_attempts() -> u32 {
    4
}

fn default_backoff() -> u64 {
    500
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: default_attempts(), backoff_base_ms: default_backoff() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default = "default_rate_limit")]
    pub rate_limit: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_key_env() -> String {
    "MATHAGENT_API_KEY".to_string()
}

fn default_rate_limit() -> usize {
    4
}

fn default_timeout() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Http(HttpConfig),
    Scripted {
        script_path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_id: Option<String>,
    },
    Replay {
        cache_path: PathBuf,
        inner: Box<BackendConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    Decoding::default().max_tokens
}

impl BackendConfig {
    pub fn decoding(&self) -> Decoding {
        Decoding { temperature: self.temperature, max_tokens: self.max_tokens }
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(BuildError::Invalid(format!("temperature {} outside [0, 1]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(BuildError::Invalid("max_tokens must be positive".into()));
        }
        match &self.kind {
            BackendKind::Http(h) => {
                if h.retry.max_attempts == 0 {
                    return Err(BuildError::Invalid("retry.max_attempts must be at least 1".into()));
                }
                if h.rate_limit == 0 {
                    return Err(BuildError::Invalid("rate_limit must be at least 1".into()));
                }
                if h.base_url.trim().is_empty() || h.model_id.trim().is_empty() {
                    return Err(BuildError::Invalid("http backend needs base_url and model_id".into()));
                }
                Ok(())
            }
            BackendKind::Scripted { .. } => Ok(()),
            BackendKind::Replay { inner, .. } => inner.validate(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid backend config: {0}")]
    Invalid(String),
    #[error("cannot load script: {0}")]
    Script(String),
    #[error(transparent)]
    Cache(#[from] super::BackendError),
}

type KeyLookup = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Builds backends from config, sharing one transport and one cache handle
/// per cache file.
pub struct BackendFactory {
    transport: Arc<dyn Transport>,
    key_lookup: Option<KeyLookup>,
    caches: Mutex<HashMap<PathBuf, Arc<ReplayCache>>>,
}

impl Default for BackendFactory {
    fn default() -> Self {
        Self::new(Arc::new(ReqwestTransport::new()))
    }
}

impl BackendFactory {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self { transport, key_lookup: None, caches: Mutex::new(HashMap::new()) }
    }

    pub fn with_key_lookup(mut self, lookup: KeyLookup) -> Self {
        self.key_lookup = Some(lookup);
        self
    }

    /// Relative paths in `config` are resolved against `base_dir`.
    pub fn build(&self, config: &BackendConfig, base_dir: &Path) -> Result<Arc<dyn Backend>, BuildError> {
        config.validate()?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        Ok(match &config.kind {
            BackendKind::Http(h) => {
                let mut b = HttpBackend::new(h.clone(), config.decoding(), self.transport.clone());
                if let Some(lookup) = &self.key_lookup {
                    b = b.with_key_lookup(lookup.clone());
                }
                Arc::new(b)
            }
            BackendKind::Scripted { script_path, model_id } => {
                let script = Script::load(&resolve(script_path)).map_err(BuildError::Script)?;
                let mut b = ScriptedBackend::new(script).with_decoding(config.decoding());
                if let Some(id) = model_id {
                    b = b.with_model_id(id);
                }
                Arc::new(b)
            }
            BackendKind::Replay { cache_path, inner } => {
                let path = resolve(cache_path);
                let cache = {
                    let mut caches = self.caches.lock().expect("cache map lock");
                    match caches.get(&path) {
                        Some(c) => c.clone(),
                        None => {
                            let c = Arc::new(ReplayCache::open(&path)?);
                            caches.insert(path, c.clone());
                            c
                        }
                    }
                };
                Arc::new(ReplayBackend::new(self.build(inner, base_dir)?, cache))
            }
        })
    }
}
