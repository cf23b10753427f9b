//! Workbench configuration (TOML) and backend construction from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatBackend, Gateway, GatewayError, HttpBackend, RetryPolicy, Transcript, TranscriptBackend, TranscriptMode};
use crate::index::{Embedder, HashEmbedder, HttpEmbedder, IndexError};
use crate::ingest::DEFAULT_RULE_SET_ID;
use crate::rag::{DEFAULT_FEW_SHOT_K, MAX_FEW_SHOT_K, NER_TEMPLATE_VERSION};

pub const FALLBACK_EMBEDDER: &str = "fallback";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Every key is optional; an empty file yields [`WorkbenchConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkbenchConfig {
    /// Chat-completions API root, e.g. `http://localhost:8000/v1`.
    pub gateway_endpoint: Option<String>,
    /// Environment variable holding the bearer token. The token itself never
    /// lives in the file.
    pub token_env: String,
    pub baseline_model: String,
    pub fine_tuned_model: String,
    /// `fallback` for the built-in hashing embedder, or an embeddings URL.
    pub embedder: String,
    pub embedder_model: String,
    pub embedder_dim: usize,
    pub template_version: String,
    pub rule_set_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub few_shot_k: usize,
    pub request_timeout_secs: u64,
    pub bind: String,
    pub data_dir: PathBuf,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        WorkbenchConfig {
            gateway_endpoint: None,
            token_env: "ELECTROCAT_API_TOKEN".into(),
            baseline_model: "baseline".into(),
            fine_tuned_model: "fine-tuned".into(),
            embedder: FALLBACK_EMBEDDER.into(),
            embedder_model: String::new(),
            embedder_dim: 0,
            template_version: NER_TEMPLATE_VERSION.into(),
            rule_set_id: DEFAULT_RULE_SET_ID.into(),
            temperature: 0.0,
            max_tokens: 512,
            max_in_flight: 4,
            few_shot_k: DEFAULT_FEW_SHOT_K,
            request_timeout_secs: 120,
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("workbench-data"),
        }
    }
}

impl WorkbenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: WorkbenchConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), message: e.to_string() })?;
        WorkbenchConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.template_version != NER_TEMPLATE_VERSION {
            return invalid(format!("template_version `{}` is not supported (expected `{NER_TEMPLATE_VERSION}`)", self.template_version));
        }
        if self.rule_set_id.trim().is_empty() {
            return invalid("rule_set_id is empty".into());
        }
        if self.baseline_model.trim().is_empty() || self.fine_tuned_model.trim().is_empty() {
            return invalid("model ids must be non-empty".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid(format!("temperature {} out of range", self.temperature));
        }
        if self.max_tokens == 0 || self.max_in_flight == 0 {
            return invalid("max_tokens and max_in_flight must be positive".into());
        }
        if !(1..=MAX_FEW_SHOT_K).contains(&self.few_shot_k) {
            return invalid(format!("few_shot_k must be in 1..={MAX_FEW_SHOT_K}"));
        }
        if self.embedder != FALLBACK_EMBEDDER && (self.embedder_model.is_empty() || self.embedder_dim == 0) {
            return invalid("a remote embedder needs embedder_model and embedder_dim".into());
        }
        Ok(())
    }

    fn token(&self) -> Option<String> {
        std::env::var(&self.token_env).ok().filter(|t| !t.is_empty())
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        if self.embedder == FALLBACK_EMBEDDER {
            return Ok(Arc::new(HashEmbedder));
        }
        Ok(Arc::new(HttpEmbedder::new(&self.embedder, &self.embedder_model, self.embedder_dim, self.token())?))
    }

    fn live_backend(&self) -> Result<Option<Arc<dyn ChatBackend>>, ConfigError> {
        let Some(endpoint) = &self.gateway_endpoint else { return Ok(None) };
        let timeout = Duration::from_secs(self.request_timeout_secs);
        Ok(Some(Arc::new(HttpBackend::new(endpoint, self.token(), RetryPolicy::default(), timeout)?)))
    }

    /// Builds the gateway. With a transcript, `replay` never touches the
    /// network and needs no endpoint; `record` requires one.
    pub fn build_gateway(&self, transcript: Option<(&Path, TranscriptMode)>) -> Result<Gateway, ConfigError> {
        let backend: Arc<dyn ChatBackend> = match transcript {
            Some((path, TranscriptMode::Replay)) => Arc::new(TranscriptBackend::replay(Arc::new(Transcript::load(path)?))),
            Some((path, mode)) => {
                let live = self
                    .live_backend()?
                    .ok_or_else(|| ConfigError::Invalid("recording needs gateway_endpoint".into()))?;
                Arc::new(TranscriptBackend::with_mode(mode, Arc::new(Transcript::open_for_record(path)?), Some(live)))
            }
            None => self
                .live_backend()?
                .ok_or_else(|| ConfigError::Invalid("no gateway_endpoint configured and no replay transcript given".into()))?,
        };
        Ok(Gateway::with_limit(backend, self.max_in_flight))
    }
}
