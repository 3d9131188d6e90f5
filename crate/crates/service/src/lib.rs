//! HTTP front end for the verification pipeline.
//!
//! | route                   | purpose                                  |
//! |-------------------------|------------------------------------------|
//! | `POST /api/verify`      | run the four pipeline stages on a text   |
//! | `GET /api/factcheck/{id}` | one fact-check record                  |
//! | `POST /api/ingest`      | replace the served corpus (admin token)  |
//! | `GET /healthz`          | index size and provider reachability     |
//!
//! Errors use the envelope `{"error": {"code", "message"}}`.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use claimline::config::{AppConfig, ConfigError, ServiceSettings};
use claimline::corpus::{open_detailed, SourceError, STORED_CORPUS_FILE};
use claimline::embedding::ProbeStatus;
use claimline::pipeline::{Pipeline, PipelineError, Snapshot, VerifyRequest};

/// Upper bound on an ingest upload.
pub const MAX_INGEST_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorEnvelope {
            error: ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::EmptyQuery
            | PipelineError::QueryTooLong { .. }
            | PipelineError::InvalidTopK { .. }
            | PipelineError::InvalidLanguage(_) => StatusCode::BAD_REQUEST,
            PipelineError::Embed(_) | PipelineError::Chat(_) => StatusCode::BAD_GATEWAY,
            PipelineError::Retrieval(_) | PipelineError::Corpus(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = match &e {
            PipelineError::EmptyQuery => "empty_query",
            PipelineError::QueryTooLong { .. } => "query_too_long",
            PipelineError::InvalidTopK { .. } => "invalid_top_k",
            PipelineError::InvalidLanguage(_) => "invalid_language",
            PipelineError::Embed(_) => "embedding_provider_error",
            PipelineError::Chat(_) => "chat_provider_error",
            PipelineError::Retrieval(_) | PipelineError::Corpus(_) => "internal",
        };
        Self::new(status, code, e.to_string())
    }
}

/// Shared service state. The served snapshot is swapped whole, so a request
/// sees either the old or the new corpus, never a mix.
pub struct AppState {
    pipeline: Arc<Pipeline>,
    settings: ServiceSettings,
    data_dir: Option<PathBuf>,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    ingest: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, settings: ServiceSettings, data_dir: Option<PathBuf>) -> Self {
        Self {
            pipeline: Arc::new(pipeline),
            settings,
            data_dir,
            snapshot: RwLock::new(None),
            ingest: tokio::sync::Mutex::new(()),
        }
    }

    /// Builds the state from a config and serves whatever corpus its data
    /// directory or corpus path holds. A corpus that fails to load leaves
    /// the service running without an index; the reason is returned.
    pub fn from_config(cfg: &AppConfig) -> Result<(Self, Vec<String>), ConfigError> {
        let data_dir = cfg.data_dir();
        let state = Self::new(cfg.pipeline()?, cfg.service.clone(), Some(data_dir.clone()));
        let source = if data_dir.join(STORED_CORPUS_FILE).is_file() {
            data_dir
        } else {
            cfg.experiment.corpus_path.clone()
        };
        let warnings = match state.load(&source) {
            Ok(w) => w,
            Err(e) => vec![format!("no index loaded: {e}")],
        };
        Ok((state, warnings))
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn install(&self, snapshot: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Some(Arc::new(snapshot));
    }

    /// Opens and installs a corpus location, reusing a saved index.
    pub fn load(&self, path: &Path) -> Result<Vec<String>, PipelineError> {
        let (snapshot, warnings) = Snapshot::open(path, self.pipeline.embedder())?;
        self.install(snapshot);
        Ok(warnings)
    }
}

/// The service routes with CORS applied per settings.
pub fn router(state: Arc<AppState>) -> Router {
    let cors = state.settings.cors_origin.as_deref().map(|origin| {
        let layer = CorsLayer::new()
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]);
        if origin == "*" {
            layer.allow_origin(Any)
        } else {
            match HeaderValue::from_str(origin) {
                Ok(v) => layer.allow_origin(AllowOrigin::exact(v)),
                Err(_) => {
                    tracing::warn!(origin, "invalid cors_origin; cross-origin requests disabled");
                    layer
                }
            }
        }
    });
    let router = Router::new()
        .route("/api/verify", post(verify))
        .route("/api/factcheck/{id}", get(factcheck))
        .route(
            "/api/ingest",
            post(ingest).layer(DefaultBodyLimit::max(MAX_INGEST_BYTES)),
        )
        .route("/healthz", get(healthz))
        .with_state(state);
    match cors {
        Some(layer) => router.layer(layer),
        None => router,
    }
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))
}

fn loaded(state: &AppState) -> Result<Arc<Snapshot>, ApiError> {
    state.snapshot().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "index_not_loaded",
            "no corpus is loaded",
        )
    })
}

async fn verify(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let mut req: VerifyRequest = parse_json(&body)?;
    if req.text.trim().is_empty() {
        return Err(PipelineError::EmptyQuery.into());
    }
    req.top_k.get_or_insert(state.settings.default_top_k);
    let snapshot = loaded(&state)?;
    let pipeline = state.pipeline.clone();
    let resp = tokio::task::spawn_blocking(move || pipeline.verify(&snapshot, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(resp).into_response())
}

async fn factcheck(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let snapshot = loaded(&state)?;
    match snapshot.corpus().fact_check(&id) {
        Some(fc) => Ok(Json(fc).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no fact-check with id {id:?}"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    /// Fact-checks now served.
    pub loaded: usize,
    pub posts: usize,
    /// Rejected records.
    pub errors: usize,
    pub error_report: Vec<SourceError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub index_size: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestPath {
    path: PathBuf,
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .or_else(|| headers.get("x-admin-token").and_then(|v| v.to_str().ok()))
        .map(str::trim)
}

/// Replaces the served corpus. The body is either `{"path": ...}` naming a
/// corpus location on the server, or an uploaded fact-check JSONL/CSV file
/// (a stored corpus file is accepted too).
async fn ingest(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let Some(expected) = state.settings.admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "ingest_disabled",
            "ingestion needs service.admin_token to be configured",
        ));
    };
    if bearer(&headers) != Some(expected) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong admin token",
        ));
    }
    let named = serde_json::from_slice::<IngestPath>(&body).ok().map(|p| p.path);
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"));

    let _serial = state.ingest.lock().await;
    let worker = state.clone();
    let summary = tokio::task::spawn_blocking(move || ingest_blocking(&worker, named, &body, is_csv))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(summary).into_response())
}

fn ingest_blocking(
    state: &AppState,
    named: Option<PathBuf>,
    body: &[u8],
    is_csv: bool,
) -> Result<IngestSummary, ApiError> {
    let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_corpus", m);
    let upload_dir;
    let path = match named {
        Some(p) => p,
        None => {
            if body.iter().all(u8::is_ascii_whitespace) {
                return Err(unprocessable("empty upload".into()));
            }
            upload_dir = tempfile::tempdir().map_err(|e| ApiError::internal(e.to_string()))?;
            let name = if is_csv { "factchecks.csv" } else { "factchecks.jsonl" };
            let p = upload_dir.path().join(name);
            std::fs::write(&p, body).map_err(|e| ApiError::internal(e.to_string()))?;
            p
        }
    };
    let opened = open_detailed(&path).map_err(|e| unprocessable(e.to_string()))?;
    if opened.corpus.num_fact_checks() == 0 {
        let detail: Vec<String> = opened.errors.iter().take(5).map(ToString::to_string).collect();
        return Err(unprocessable(format!(
            "no valid fact-check records ({} rejected){}",
            opened.errors.len(),
            if detail.is_empty() {
                String::new()
            } else {
                format!(": {}", detail.join("; "))
            }
        )));
    }
    let snapshot = Snapshot::build(opened.corpus, state.pipeline.embedder())
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "embedding_provider_error", e.to_string()))?;
    if let Some(dir) = &state.data_dir {
        snapshot
            .save(dir)
            .map_err(|e| ApiError::internal(format!("cannot persist corpus: {e}")))?;
    }
    let summary = IngestSummary {
        loaded: snapshot.corpus().num_fact_checks(),
        posts: snapshot.corpus().num_posts(),
        errors: opened.errors.len(),
        error_report: opened.errors,
        warnings: opened.warnings,
        index_size: snapshot.len(),
    };
    state.install(snapshot);
    tracing::info!(loaded = summary.loaded, errors = summary.errors, "corpus ingested");
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    /// `ok`, or `degraded` when no index is loaded or a provider is down.
    pub status: String,
    pub index_size: usize,
    pub providers: Providers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Providers {
    pub embedder: String,
    pub chat: String,
}

fn status_name(s: ProbeStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    let index_size = state.snapshot().map_or(0, |s| s.len());
    let pipeline = state.pipeline.clone();
    let (embedder, chat) = tokio::task::spawn_blocking(move || {
        let chat = pipeline.chat().map_or(ProbeStatus::Disabled, |c| c.probe());
        (pipeline.embedder().probe(), chat)
    })
    .await
    .unwrap_or((ProbeStatus::Unreachable, ProbeStatus::Unreachable));
    let healthy = state.snapshot().is_some() && embedder == ProbeStatus::Ok && chat != ProbeStatus::Unreachable;
    Json(Health {
        status: if healthy { "ok" } else { "degraded" }.into(),
        index_size,
        providers: Providers {
            embedder: status_name(embedder),
            chat: status_name(chat),
        },
    })
}
