//! Application configuration: one TOML file shared by the CLI and the
//! service, plus `CLAIMLINE_*` environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbeddingCache, ProviderKind};
use crate::harness::{resolve, ExperimentConfig, HarnessError};
use crate::llm::{Chat, ChatSpec, TemplateSet};
use crate::pipeline::{Pipeline, PipelineOptions, DEFAULT_MAX_TEXT_LEN, DEFAULT_TOP_K};

pub const ENV_CONFIG: &str = "CLAIMLINE_CONFIG";
pub const ENV_EMBED_ENDPOINT: &str = "CLAIMLINE_EMBED_ENDPOINT";
pub const ENV_CHAT_ENDPOINT: &str = "CLAIMLINE_CHAT_ENDPOINT";
pub const ENV_ADMIN_TOKEN: &str = "CLAIMLINE_ADMIN_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Invalid(#[from] HarnessError),
    #[error("no config given; pass --config or set {ENV_CONFIG}")]
    Missing,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}
fn default_max_text_len() -> usize {
    DEFAULT_MAX_TEXT_LEN
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSettings {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Required by `POST /api/ingest`; ingestion is refused when unset.
    #[serde(default)]
    pub admin_token: Option<String>,
    #[serde(default = "default_max_text_len")]
    pub max_text_len: usize,
    #[serde(default = "default_true")]
    pub degraded_mode: bool,
    /// Allowed browser origin; `*` allows any.
    #[serde(default)]
    pub cors_origin: Option<String>,
    #[serde(default = "default_top_k")]
    pub default_top_k: usize,
    /// Where ingested corpora and their index are stored; defaults to the
    /// corpus path when that is a directory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            admin_token: None,
            max_text_len: default_max_text_len(),
            degraded_mode: true,
            cors_origin: None,
            default_top_k: default_top_k(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub service: ServiceSettings,
}

impl AppConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Reads `path`, applies process environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        cfg.apply_env_overrides(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    /// `explicit`, else `$CLAIMLINE_CONFIG`.
    pub fn locate(explicit: Option<&Path>) -> Result<PathBuf, ConfigError> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from))
            .ok_or(ConfigError::Missing)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let e = &mut self.experiment;
        e.corpus_path = resolve(base, &e.corpus_path);
        e.output_dir = resolve(base, &e.output_dir);
        for p in [&mut e.templates_dir, &mut e.cache_path, &mut self.service.data_dir]
            .into_iter()
            .flatten()
        {
            *p = resolve(base, p);
        }
        if let Some(chat) = &mut e.chat {
            if let Some(p) = &mut chat.fixture_path {
                *p = resolve(base, p);
            }
        }
    }

    /// Endpoint variables switch the matching provider to `remote`.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let set = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        if let Some(url) = set(ENV_EMBED_ENDPOINT) {
            self.experiment.embedder.kind = ProviderKind::Remote;
            self.experiment.embedder.endpoint = Some(url);
        }
        if let Some(url) = set(ENV_CHAT_ENDPOINT) {
            let chat = self
                .experiment
                .chat
                .get_or_insert_with(|| ChatSpec::remote("default", url.clone()));
            chat.kind = ProviderKind::Remote;
            chat.endpoint = Some(url);
        }
        if let Some(token) = set(ENV_ADMIN_TOKEN) {
            self.service.admin_token = Some(token);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment.validate()?;
        let s = &self.service;
        let bad = |m: String| Err(ConfigError::Invalid(HarnessError::Config(m)));
        if s.max_text_len == 0 {
            return bad("service.max_text_len must be positive".into());
        }
        if s.default_top_k == 0 || s.default_top_k > crate::llm::MAX_FILTER_CANDIDATES {
            return bad(format!(
                "service.default_top_k {} must be in 1..={}",
                s.default_top_k,
                crate::llm::MAX_FILTER_CANDIDATES
            ));
        }
        if s.admin_token.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return bad("service.admin_token is empty".into());
        }
        Ok(())
    }

    /// Builds the live pipeline: providers, embedding cache, templates and
    /// service options.
    pub fn pipeline(&self) -> Result<Pipeline, ConfigError> {
        let e = &self.experiment;
        let cache = match &e.cache_path {
            Some(p) => EmbeddingCache::open(p).map_err(HarnessError::from)?,
            None => EmbeddingCache::in_memory(),
        };
        let embedder = Embedder::from_spec(&e.embedder)
            .map_err(HarnessError::from)?
            .with_cache(Arc::new(cache));
        let chat = e
            .chat
            .as_ref()
            .map(Chat::from_spec)
            .transpose()
            .map_err(HarnessError::from)?;
        let templates = match &e.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir).map_err(HarnessError::from)?,
            None => TemplateSet::default(),
        };
        let options = PipelineOptions {
            degraded_mode: self.service.degraded_mode,
            summary_order: e.summary_order,
            max_text_len: self.service.max_text_len,
        };
        Ok(Pipeline::new(embedder, chat, Arc::new(templates), options))
    }

    /// Directory holding the served corpus and index.
    pub fn data_dir(&self) -> PathBuf {
        match &self.service.data_dir {
            Some(d) => d.clone(),
            None if self.experiment.corpus_path.is_dir() => self.experiment.corpus_path.clone(),
            None => self
                .experiment
                .corpus_path
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        }
    }
}
