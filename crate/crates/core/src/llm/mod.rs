//! Chat-model providers, prompt templates and the generative pipeline
//! stages: candidate filtration, summarization and veracity prediction.

mod remote;
mod stages;
mod stub;
mod template;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use remote::RemoteChat;
pub use stages::{
    filter_candidates, overall_summary, parse_filter_reply, parse_veracity_reply, predict_veracity,
    predict_veracity_baseline, render_candidates, render_context, summarize, Evidence, FilterResult, ParsedSelection,
    RelevantPick, SummaryOrder, VeracityVerdict, MAX_FILTER_CANDIDATES,
};
pub use stub::{prompt_sha256, ScriptedChat, StubChat};
pub use template::{Placeholder, PromptTemplate, TemplateName, TemplateSet};

use crate::embedding::{ProbeStatus, ProviderKind};
use crate::http;
use crate::sync::Semaphore;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited by provider (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no stub fixture for prompt {sha256}")]
    NoFixture { sha256: String },
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

impl From<http::HttpFailure> for LlmError {
    fn from(f: http::HttpFailure) -> Self {
        match f {
            http::HttpFailure::Transport(m) => LlmError::Transport(m),
            http::HttpFailure::RateLimited { retry_after_secs } => LlmError::RateLimited { retry_after_secs },
            http::HttpFailure::Status { status, body } => LlmError::Provider { status, body },
            http::HttpFailure::Decode(m) => LlmError::Malformed(m),
        }
    }
}

fn default_max_output_tokens() -> u32 {
    1024
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_parallelism() -> usize {
    4
}
fn default_retry_base_ms() -> u64 {
    200
}

/// Chat provider configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSpec {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Stub only: JSONL of scripted replies.
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    /// Stub only: reply for prompts without a fixture entry; unset makes
    /// them an error.
    #[serde(default)]
    pub default_reply: Option<String>,
    /// Stub only: artificial delay per call.
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl ChatSpec {
    pub fn stub(model_name: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: None,
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            timeout_ms: default_timeout_ms(),
            fixture_path: None,
            default_reply: None,
            latency_ms: 0,
            api_key_env: None,
            parallelism: default_parallelism(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn remote(model_name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::stub(model_name)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be a finite value >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::Config("max_output_tokens must be positive".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(LlmError::Config("remote chat provider requires an endpoint".into()));
        }
        Ok(())
    }
}

/// One chat backend; `complete_raw` is a single call without retries.
pub trait ChatProvider: Send + Sync {
    fn spec(&self) -> &ChatSpec;
    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError>;
    fn probe(&self) -> ProbeStatus {
        ProbeStatus::Ok
    }
}

pub fn build_chat_provider(spec: &ChatSpec) -> Result<Arc<dyn ChatProvider>, LlmError> {
    spec.validate()?;
    Ok(match spec.kind {
        ProviderKind::Stub => Arc::new(StubChat::from_spec(spec.clone())?),
        ProviderKind::Remote => Arc::new(RemoteChat::new(spec.clone())?),
    })
}

struct ChatInner {
    provider: Arc<dyn ChatProvider>,
    calls: AtomicUsize,
    limit: Semaphore,
}

/// Provider handle with a concurrency bound and retry policy. Cheap to clone.
#[derive(Clone)]
pub struct Chat {
    inner: Arc<ChatInner>,
}

impl Chat {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        let parallelism = provider.spec().parallelism;
        Self {
            inner: Arc::new(ChatInner {
                provider,
                calls: AtomicUsize::new(0),
                limit: Semaphore::new(parallelism),
            }),
        }
    }

    pub fn from_spec(spec: &ChatSpec) -> Result<Self, LlmError> {
        Ok(Self::new(build_chat_provider(spec)?))
    }

    pub fn spec(&self) -> &ChatSpec {
        self.inner.provider.spec()
    }

    pub fn model_name(&self) -> &str {
        &self.spec().model_name
    }

    pub fn provider_calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    pub fn probe(&self) -> ProbeStatus {
        self.inner.provider.probe()
    }

    /// Sends one prompt. Transport failures are retried up to three
    /// attempts; a blank reply is `EmptyCompletion`.
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::InvalidInput("prompt is empty".into()));
        }
        let reply = http::with_retries(
            3,
            Duration::from_millis(self.spec().retry_base_ms),
            LlmError::retryable,
            || {
                let _permit = self.inner.limit.acquire();
                self.inner.calls.fetch_add(1, Ordering::SeqCst);
                self.inner.provider.complete_raw(prompt)
            },
        )?;
        if reply.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(reply)
    }
}

/// One-off completion with a provider built from `spec`.
pub fn chat(spec: &ChatSpec, prompt: &str) -> Result<String, LlmError> {
    Chat::from_spec(spec)?.complete(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(ChatSpec::stub("m").validate().is_ok());
        let mut s = ChatSpec::stub("m");
        s.temperature = -0.1;
        assert!(s.validate().is_err());
        s.temperature = 0.0;
        s.max_output_tokens = 0;
        assert!(s.validate().is_err());
        assert!(ChatSpec::remote("m", " ").validate().is_err());
    }

    #[test]
    fn spec_defaults_from_toml() {
        let s: ChatSpec = toml::from_str("kind = \"stub\"\nmodel_name = \"m\"").unwrap();
        assert_eq!(s, ChatSpec::stub("m"));
    }

    #[test]
    fn empty_prompt_and_empty_completion() {
        let chat = Chat::new(Arc::new(ScriptedChat::new("m", |_| Ok("  \n".into()))));
        assert!(matches!(chat.complete(" "), Err(LlmError::InvalidInput(_))));
        assert_eq!(chat.complete("hi"), Err(LlmError::EmptyCompletion));
    }

    #[test]
    fn transport_failures_retry_three_times() {
        let mut spec = ChatSpec::stub("m");
        spec.retry_base_ms = 1;
        let p = ScriptedChat::with_spec(spec, |_| Err(LlmError::Transport("down".into())));
        let chat = Chat::new(Arc::new(p));
        assert!(matches!(chat.complete("x"), Err(LlmError::Transport(_))));
        assert_eq!(chat.provider_calls(), 3);

        let p = ScriptedChat::new("m", |_| {
            Err(LlmError::Provider {
                status: 400,
                body: "{\"e\":1}".into(),
            })
        });
        let chat = Chat::new(Arc::new(p));
        assert_eq!(
            chat.complete("x"),
            Err(LlmError::Provider {
                status: 400,
                body: "{\"e\":1}".into()
            })
        );
        assert_eq!(chat.provider_calls(), 1);
    }
}
