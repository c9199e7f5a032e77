//! HTTP API over the review store.
//!
//! Every mutation goes through one mutex-guarded [`Store`], so changes are
//! applied one at a time in arrival order. Caption requests run outside the
//! lock and their results are committed afterwards.

mod captioner;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use embodia_core::review::{
    Batch, BatchStatus, Captioner, Decision, IngestOutcome, LabelItem, NewItem, ReviewError, SourceLedger, Store,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;

pub use captioner::HttpCaptioner;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<Store>>,
    captioner: Option<Arc<dyn Captioner>>,
    token: Option<String>,
}

impl AppState {
    pub fn new(store: Store, captioner: Option<Arc<dyn Captioner>>, token: Option<String>) -> Self {
        Self {
            store: Arc::new(Mutex::new(store)),
            captioner,
            token,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Writes a snapshot; used on shutdown.
    pub fn flush(&self) -> Result<(), ReviewError> {
        self.lock().snapshot()
    }
}

pub struct ApiError(StatusCode, String);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let code = match &e {
            ReviewError::UnknownBatch(_) | ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ReviewError::InvalidTransition { .. } | ReviewError::DuplicateItem(_) => StatusCode::CONFLICT,
            ReviewError::InvalidDecision(_) | ReviewError::Empty(_) => StatusCode::BAD_REQUEST,
            ReviewError::Io { .. } | ReviewError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    seed: u64,
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        version: VERSION,
        seed: app.lock().seed(),
    })
}

#[derive(Deserialize)]
struct BatchFilter {
    status: Option<BatchStatus>,
}

/// A batch with its sampled items expanded.
#[derive(Serialize, Deserialize)]
pub struct BatchView {
    #[serde(flatten)]
    pub batch: Batch,
    pub sampled_items: Vec<LabelItem>,
}

fn view(store: &Store, b: &Batch) -> BatchView {
    BatchView {
        batch: b.clone(),
        sampled_items: b.sampled_ids.iter().map(|id| store.state().items[id].clone()).collect(),
    }
}

async fn list_batches(State(app): State<AppState>, Query(f): Query<BatchFilter>) -> Json<Vec<Batch>> {
    let store = app.lock();
    Json(
        store
            .state()
            .batches
            .values()
            .filter(|b| f.status.is_none_or(|s| s == b.status))
            .cloned()
            .collect(),
    )
}

async fn get_batch(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<BatchView> {
    let store = app.lock();
    let b = store.state().batch(&id)?;
    Ok(Json(view(&store, b)))
}

async fn start_review(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<BatchView> {
    let mut store = app.lock();
    store.start_review(&id)?;
    let b = store.state().batch(&id)?;
    Ok(Json(view(&store, b)))
}

#[derive(Deserialize)]
struct DecisionBody {
    action: String,
    #[serde(default)]
    worst_item_ids: Vec<String>,
    #[serde(default)]
    feedback: Option<String>,
}

async fn decide(State(app): State<AppState>, Path(id): Path<String>, Json(body): Json<DecisionBody>) -> ApiResult<BatchView> {
    let decision = match body.action.as_str() {
        "accept" => Decision::Accept,
        "reject" => Decision::Reject {
            worst_item_ids: body.worst_item_ids,
            feedback: body.feedback.unwrap_or_default(),
        },
        other => return Err(ApiError(StatusCode::BAD_REQUEST, format!("unknown action {other:?}"))),
    };
    let mut store = app.lock();
    store.decide(&id, decision)?;
    let b = store.state().batch(&id)?;
    Ok(Json(view(&store, b)))
}

async fn relabel(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let Some(captioner) = app.captioner.clone() else {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "no captioner configured".into()));
    };
    let requests = app.lock().caption_requests(&id)?;
    let results = tokio::task::spawn_blocking(move || {
        requests
            .into_iter()
            .map(|(item, req)| (item, captioner.caption(&req)))
            .collect::<Vec<_>>()
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let report = app.lock().apply_captions(&id, results)?;
    let code = if report.failed.is_empty() {
        StatusCode::OK
    } else {
        StatusCode::BAD_GATEWAY
    };
    Ok((code, Json(report)).into_response())
}

#[derive(Deserialize)]
struct CaptionBody {
    caption: String,
    #[serde(default)]
    editor: Option<String>,
}

async fn edit_caption(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<CaptionBody>,
) -> ApiResult<LabelItem> {
    let mut store = app.lock();
    let editor = body.editor.unwrap_or_else(|| "inspector".into());
    store.edit_caption(&id, &body.caption, &editor)?;
    Ok(Json(store.state().item(&id)?.clone()))
}

async fn get_item(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<LabelItem> {
    Ok(Json(app.lock().state().item(&id)?.clone()))
}

async fn ledger(State(app): State<AppState>) -> Json<SourceLedger> {
    Json(app.lock().state().ledger.clone())
}

#[derive(Deserialize)]
struct IngestBody {
    source_id: String,
    items: Vec<NewItem>,
}

async fn ingest(State(app): State<AppState>, Json(body): Json<IngestBody>) -> Result<Response, ApiError> {
    let outcome = app.lock().ingest(&body.source_id, body.items)?;
    let code = match outcome {
        IngestOutcome::Accepted { .. } => StatusCode::CREATED,
        IngestOutcome::Refused { .. } => StatusCode::FORBIDDEN,
    };
    Ok((code, Json(outcome)).into_response())
}

async fn export(State(app): State<AppState>) -> Response {
    let mut out = Vec::new();
    app.lock().export_jsonl(&mut out).expect("writing to memory");
    ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response()
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

/// The API router. Static UI files are served from `ui_dir` when given.
pub fn router(app: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/batches", get(list_batches))
        .route("/batches/{id}", get(get_batch))
        .route("/batches/{id}/start", post(start_review))
        .route("/batches/{id}/decision", post(decide))
        .route("/batches/{id}/relabel", post(relabel))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/caption", post(edit_caption))
        .route("/ledger", get(ledger))
        .route("/ingest", post(ingest))
        .route("/export", get(export))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token));
    let router = Router::new().route("/health", get(health)).merge(api).with_state(app);
    match ui_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Review(#[from] ReviewError),
}

/// Binds first so a taken port fails fast.
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, ServeError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|e| ServeError::Bind {
        addr,
        message: e.to_string(),
    })
}

/// Serves until `shutdown` resolves, then writes a snapshot.
pub async fn serve_until(
    listener: tokio::net::TcpListener,
    app: AppState,
    ui_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(app.clone(), ui_dir))
        .with_graceful_shutdown(shutdown)
        .await?;
    app.flush()?;
    tracing::info!("review store flushed");
    Ok(())
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn termination() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
