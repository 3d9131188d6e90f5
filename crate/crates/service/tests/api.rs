use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use claimline::config::ServiceSettings;
use claimline::embedding::{EmbedError, Embedder, EmbedderSpec, EmbeddingProvider, StubEmbedder};
use claimline::llm::{Chat, ChatSpec, LlmError, ScriptedChat, TemplateSet};
use claimline::pipeline::{Pipeline, PipelineOptions, Snapshot};
use claimline_service::{router, AppState};

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn stub_chat() -> Chat {
    let mut spec = ChatSpec::stub("stub-chat");
    spec.fixture_path = Some(demo_dir().join("chat.jsonl"));
    Chat::from_spec(&spec).unwrap()
}

fn embedder() -> Embedder {
    Embedder::from_spec(&EmbedderSpec::stub("stub-hash-64", 64)).unwrap()
}

fn state_with(embedder: Embedder, chat: Option<Chat>, settings: ServiceSettings, load: bool) -> Arc<AppState> {
    let options = PipelineOptions {
        degraded_mode: settings.degraded_mode,
        max_text_len: settings.max_text_len,
        ..PipelineOptions::default()
    };
    let pipeline = Pipeline::new(embedder, chat, Arc::new(TemplateSet::default()), options);
    let state = AppState::new(pipeline, settings, None);
    if load {
        state.load(&demo_dir()).unwrap();
    }
    Arc::new(state)
}

fn app(chat: Option<Chat>, settings: ServiceSettings) -> Router {
    router(state_with(embedder(), chat, settings, true))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, body)
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn ingest(body: impl Into<Body>, token: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/api/ingest").header(header::CONTENT_TYPE, "application/x-ndjson");
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    b.body(body.into()).unwrap()
}

fn admin() -> ServiceSettings {
    ServiceSettings {
        admin_token: Some("sesame".into()),
        ..ServiceSettings::default()
    }
}

#[tokio::test]
async fn verify_end_to_end_with_stubs() {
    let app = app(Some(stub_chat()), ServiceSettings::default());
    let (status, body) = call(
        &app,
        post_json(
            "/api/verify",
            json!({"text": "The new 5G towers spread the coronavirus", "top_k": 5}),
        ),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let relevant = body["relevant"].as_array().unwrap();
    assert_eq!(relevant.len(), 1);
    assert_eq!(relevant[0]["factcheck"]["id"], "fc-en-01");
    assert!(!relevant[0]["summary"].as_str().unwrap().is_empty());
    assert_eq!(body["irrelevant"].as_array().unwrap().len(), 4);
    assert_eq!(body["verdict"]["label"], "False");
    assert_eq!(body["degraded"], false);
    for stage in ["retrieve_ms", "filter_ms", "summarize_ms", "predict_ms", "total_ms"] {
        assert!(body["timing"][stage].is_u64());
    }
}

#[tokio::test]
async fn request_validation() {
    let app = app(Some(stub_chat()), ServiceSettings::default());
    let cases = [
        (json!({"text": "   "}), "empty_query"),
        (json!({"text": "x".repeat(8193)}), "query_too_long"),
        (json!({"text": "x", "top_k": 0}), "invalid_top_k"),
        (json!({"text": "x", "top_k": 51}), "invalid_top_k"),
        (json!({"text": "x", "language_hint": "English"}), "invalid_language"),
        (json!({"nope": 1}), "invalid_request"),
    ];
    for (req, code) in cases {
        let (status, body) = call(&app, post_json("/api/verify", req)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(body["error"]["code"], code, "{body}");
        assert!(body["error"]["message"].is_string());
    }
}

#[tokio::test]
async fn no_index_is_503_and_health_degraded() {
    let app = router(state_with(
        embedder(),
        Some(stub_chat()),
        ServiceSettings::default(),
        false,
    ));
    let (status, body) = call(&app, post_json("/api/verify", json!({"text": "x"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "index_not_loaded");
    let (_, health) = call(&app, get("/healthz")).await;
    assert_eq!(health["status"], "degraded");
    assert_eq!(health["index_size"], 0);
}

#[tokio::test]
async fn health_reports_loaded_index_and_providers() {
    let app = app(Some(stub_chat()), ServiceSettings::default());
    let (status, health) = call(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        health,
        json!({"status": "ok", "index_size": 11, "providers": {"embedder": "ok", "chat": "ok"}})
    );

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let mut spec = ChatSpec::remote("m", dead);
    spec.timeout_ms = 500;
    let app = self::app(Some(Chat::from_spec(&spec).unwrap()), ServiceSettings::default());
    let (_, health) = call(&app, get("/healthz")).await;
    assert_eq!(health["providers"]["chat"], "unreachable");
    assert_eq!(health["status"], "degraded");
}

#[tokio::test]
async fn degraded_mode_returns_retrieval_only() {
    let app = app(None, ServiceSettings::default());
    let (status, body) = call(
        &app,
        post_json("/api/verify", json!({"text": "garlic prevents the flu", "top_k": 7})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["degraded"], true);
    assert_eq!(body["relevant"].as_array().unwrap().len(), 0);
    assert_eq!(body["irrelevant"].as_array().unwrap().len(), 7);
    assert_eq!(body["verdict"]["label"], "Unverifiable");
}

#[tokio::test]
async fn chat_failure_without_degraded_mode_is_502() {
    let failing = Chat::new(Arc::new(ScriptedChat::new("down", |_| {
        Err(LlmError::Provider {
            status: 500,
            body: "boom".into(),
        })
    })));
    let settings = ServiceSettings {
        degraded_mode: false,
        ..ServiceSettings::default()
    };
    let app = app(Some(failing.clone()), settings);
    let (status, body) = call(&app, post_json("/api/verify", json!({"text": "5G towers"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"]["code"], "chat_provider_error");

    let app = self::app(Some(failing), ServiceSettings::default());
    let (status, body) = call(&app, post_json("/api/verify", json!({"text": "5G towers"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["degraded"], true);
}

#[tokio::test]
async fn factcheck_lookup() {
    let app = app(None, ServiceSettings::default());
    let (status, body) = call(&app, get("/api/factcheck/fc-es-02")).await;
    assert_eq!(status, StatusCode::OK);
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = vec![
        "id",
        "claim_text",
        "claim_english",
        "language",
        "published_date",
        "organization",
        "rating_raw",
        "rating",
        "article_url",
        "article_text",
        "reference_summary",
        "reference_summary_english",
    ];
    let mut keys_sorted = keys.clone();
    keys_sorted.sort_unstable();
    expected.sort_unstable();
    assert_eq!(keys_sorted, expected);
    assert_eq!(body["published_date"], "2022-03-03");
    assert_eq!(body["rating"], "False");

    let (status, body) = call(&app, get("/api/factcheck/nope")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
}

const THREE: &str = concat!(
    "{\"id\":\"n1\",\"claim_text\":\"Bananas are blue\",\"language\":\"en\"}\n",
    "{\"id\":\"n2\",\"claim_text\":\"The sea is made of lemonade\",\"language\":\"en\"}\n",
    "{\"id\":\"n3\",\"claim_text\":\"Los gatos hablan\",\"language\":\"es\"}\n",
);

#[tokio::test]
async fn ingest_requires_token() {
    let app = app(None, admin());
    let (status, body) = call(&app, ingest(THREE, None)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"]["code"], "unauthorized");
    let (status, _) = call(&app, ingest(THREE, Some("wrong"))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let closed = self::app(None, ServiceSettings::default());
    let (status, body) = call(&closed, ingest(THREE, Some("sesame"))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"]["code"], "ingest_disabled");
}

#[tokio::test]
async fn ingest_upload_and_errors() {
    let app = app(None, admin());
    let (status, body) = call(&app, ingest(THREE, Some("sesame"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["loaded"], 3);
    assert_eq!(body["errors"], 0);
    let (_, health) = call(&app, get("/healthz")).await;
    assert_eq!(health["index_size"], 3);
    let (status, _) = call(&app, get("/api/factcheck/fc-en-01")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let dup = format!("{THREE}{{\"id\":\"n1\",\"claim_text\":\"again\",\"language\":\"en\"}}\n");
    let (status, body) = call(&app, ingest(dup, Some("sesame"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["errors"], 1);
    assert_eq!(body["error_report"][0]["kind"], "duplicate_id");
    assert_eq!(body["error_report"][0]["line"], 4);

    let (status, body) = call(&app, ingest("not json\n{\"id\":\"x\"}\n", Some("sesame"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "malformed_corpus");
    let (_, health) = call(&app, get("/healthz")).await;
    assert_eq!(health["index_size"], 4 - 1);
}

#[tokio::test]
async fn ingest_by_path_persists_to_data_dir() {
    let data = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(
        embedder(),
        None,
        Arc::new(TemplateSet::default()),
        PipelineOptions::default(),
    );
    let state = Arc::new(AppState::new(pipeline, admin(), Some(data.path().to_path_buf())));
    let app = router(state);
    let req = Request::post("/api/ingest")
        .header(header::AUTHORIZATION, "Bearer sesame")
        .body(Body::from(json!({"path": demo_dir()}).to_string()))
        .unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!((body["loaded"].as_u64(), body["posts"].as_u64()), (Some(11), Some(10)));
    assert!(data.path().join("corpus.jsonl").is_file());
    assert!(data.path().join("index.bin").is_file());
    let (reopened, warnings) = Snapshot::open(data.path(), &embedder()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(reopened.len(), 11);
}

/// Stub embedder that stalls while `slow` is set.
struct Gate {
    inner: StubEmbedder,
    slow: Arc<AtomicBool>,
}

impl EmbeddingProvider for Gate {
    fn spec(&self) -> &EmbedderSpec {
        self.inner.spec()
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if self.slow.load(Ordering::SeqCst) && texts.len() > 1 {
            std::thread::sleep(Duration::from_millis(400));
        }
        self.inner.embed_raw(texts)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn verify_serves_old_snapshot_until_swap() {
    let slow = Arc::new(AtomicBool::new(true));
    let gate = Gate {
        inner: StubEmbedder::new(EmbedderSpec::stub("stub-hash-64", 64)),
        slow: slow.clone(),
    };
    slow.store(false, Ordering::SeqCst);
    let state = state_with(Embedder::new(Arc::new(gate)), None, admin(), true);
    slow.store(true, Ordering::SeqCst);
    let app = router(state);

    let ingesting = {
        let app = app.clone();
        tokio::spawn(async move { call(&app, ingest(THREE, Some("sesame"))).await })
    };
    let mut seen_old = 0;
    while !ingesting.is_finished() {
        let (status, body) = call(
            &app,
            post_json("/api/verify", json!({"text": "Bananas are blue", "top_k": 50})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let n = body["irrelevant"].as_array().unwrap().len();
        if ingesting.is_finished() {
            break;
        }
        assert!(n == 11 || n == 3, "partial index of size {n}");
        seen_old += usize::from(n == 11);
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (status, _) = ingesting.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert!(seen_old > 0);
    let (_, body) = call(
        &app,
        post_json("/api/verify", json!({"text": "Bananas are blue", "top_k": 50})),
    )
    .await;
    assert_eq!(body["irrelevant"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn cors_header_when_configured() {
    let settings = ServiceSettings {
        cors_origin: Some("http://localhost:5173".into()),
        ..ServiceSettings::default()
    };
    let app = app(None, settings);
    let req = Request::get("/healthz")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
}
