use serde_json::{json, Value};

use super::{ChatProvider, ChatSpec, LlmError};
use crate::embedding::ProbeStatus;
use crate::http;

/// OpenAI-compatible chat completions endpoint.
pub struct RemoteChat {
    spec: ChatSpec,
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteChat {
    pub fn new(spec: ChatSpec) -> Result<Self, LlmError> {
        spec.validate()?;
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config("remote chat provider requires an endpoint".into()))?;
        Ok(Self {
            agent: http::agent(spec.timeout()),
            endpoint,
            spec,
        })
    }
}

fn parse_response(body: &Value) -> Result<String, LlmError> {
    let choice = body
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| LlmError::Malformed(format!("response lacks choices: {body}")))?;
    match choice.pointer("/message/content") {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Err(LlmError::EmptyCompletion),
        Some(other) => Err(LlmError::Malformed(format!("content is not a string: {other}"))),
    }
}

impl ChatProvider for RemoteChat {
    fn spec(&self) -> &ChatSpec {
        &self.spec
    }

    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError> {
        let token = self.spec.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        let body = json!({
            "model": self.spec.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_output_tokens,
        });
        let resp = http::post_json(&self.agent, &self.endpoint, token.as_deref(), &body)?;
        parse_response(&resp)
    }

    fn probe(&self) -> ProbeStatus {
        if http::probe(
            &self.endpoint,
            self.spec.timeout().min(std::time::Duration::from_secs(2)),
        ) {
            ProbeStatus::Ok
        } else {
            ProbeStatus::Unreachable
        }
    }
}
