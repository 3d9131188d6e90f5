use serde_json::{json, Value};

use super::{EmbedError, EmbedderSpec, EmbeddingProvider, ProbeStatus};
use crate::http;

/// OpenAI-compatible embeddings endpoint:
/// `{"model", "input"}` → `{"data": [{"embedding": [...]}, ...]}`.
pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self, EmbedError> {
        spec.validate()?;
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config("remote embedder requires an endpoint".into()))?;
        Ok(Self {
            agent: http::agent(spec.timeout()),
            endpoint,
            spec,
        })
    }
}

fn parse_response(body: &Value) -> Result<Vec<Vec<f32>>, EmbedError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| EmbedError::InvalidVector(format!("response lacks a data array: {body}")))?;
    let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::InvalidVector(format!("data[{pos}] lacks an embedding")))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| EmbedError::InvalidVector(format!("data[{pos}] holds a non-number")))
            })
            .collect::<Result<Vec<f32>, _>>()?;
        rows.push((index, values));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl EmbeddingProvider for RemoteEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let token = self.spec.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        let body = json!({ "model": self.spec.model_name, "input": texts });
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed_batch, Embedder};
    use crate::test_server::{Canned, TestServer};
    use std::sync::Arc;

    #[test]
    fn request_shape_and_response_order() {
        let server = TestServer::start(vec![Canned::ok(
            r#"{"data":[{"index":1,"embedding":[0,2]},{"index":0,"embedding":[3,4]}]}"#,
        )]);
        let mut spec = EmbedderSpec::remote("e5-large", server.url(), 2);
        spec.retry_base_ms = 1;
        let e = Embedder::new(Arc::new(RemoteEmbedder::new(spec).unwrap()));
        let out = embed_batch(&e, &["first".into(), "second".into()]).unwrap();
        assert_eq!(out[0].values(), &[0.6, 0.8]);
        assert_eq!(out[1].values(), &[0.0, 1.0]);
        let req: Value = serde_json::from_str(&server.requests()[0]).unwrap();
        assert_eq!(req, json!({"model": "e5-large", "input": ["first", "second"]}));
    }

    #[test]
    fn transport_errors_retry_three_times() {
        let server = TestServer::start(vec![Canned::status(503, "busy"); 3]);
        let mut spec = EmbedderSpec::remote("m", server.url(), 2);
        spec.retry_base_ms = 1;
        let e = Embedder::new(Arc::new(RemoteEmbedder::new(spec).unwrap()));
        let err = embed_batch(&e, &["x".into()]).unwrap_err();
        assert!(matches!(err, EmbedError::Transport(_)));
        assert_eq!(server.requests().len(), 3);
    }

    #[test]
    fn rate_limit_is_distinct_and_not_retried() {
        let server = TestServer::start(vec![Canned::status(429, "slow down")]);
        let mut spec = EmbedderSpec::remote("m", server.url(), 2);
        spec.retry_base_ms = 1;
        let e = Embedder::new(Arc::new(RemoteEmbedder::new(spec).unwrap()));
        assert!(matches!(
            embed_batch(&e, &["x".into()]),
            Err(EmbedError::RateLimited { .. })
        ));
        assert_eq!(server.requests().len(), 1);
    }

    #[test]
    fn wrong_dimension_reported() {
        let server = TestServer::start(vec![Canned::ok(r#"{"data":[{"embedding":[1,2,3]}]}"#)]);
        let e = Embedder::new(Arc::new(
            RemoteEmbedder::new(EmbedderSpec::remote("m", server.url(), 2)).unwrap(),
        ));
        assert!(matches!(
            embed_batch(&e, &["x".into()]),
            Err(EmbedError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }
}
