//! HTTP routes over a shared [`Store`].

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;

use super::store::{ServiceError, Store};
use crate::corpus::{Choice, ItemId};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<Store>>,
    assets: Option<PathBuf>,
    clock: Clock,
}

impl AppState {
    pub fn new(store: Store, assets: Option<PathBuf>, clock: Clock) -> Self {
        AppState {
            store: Arc::new(Mutex::new(store)),
            assets,
            clock,
        }
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/judgments", post(submit))
        .route("/api/judgments/undo", post(undo))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .route("/assets/{id}", get(asset))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

struct ApiError(StatusCode, &'static str, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::BadRequest(m) => ApiError(StatusCode::BAD_REQUEST, "bad_request", m),
            ServiceError::NotFound(m) => ApiError(StatusCode::NOT_FOUND, "not_found", m),
            ServiceError::Conflict(m) => ApiError(StatusCode::CONFLICT, "conflict", m),
            ServiceError::Unavailable(m) => ApiError(StatusCode::SERVICE_UNAVAILABLE, "unavailable", m),
            ServiceError::Storage(e) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "detail": self.2}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, Store> {
    state.store.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
    session: Option<String>,
}

async fn next_task(State(state): State<AppState>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ServiceError::BadRequest("query parameter `annotator` is required".into()))?;
    let session = q.session.unwrap_or_else(|| annotator.clone());
    let now = state.now();
    let mut store = lock(&state);
    let next = store.next_task(&annotator, &session, now)?;
    let progress = store.progress(Some(&annotator), now);
    let mut body = serde_json::to_value(&next).expect("tasks serialize");
    body["progress"] = serde_json::to_value(progress).expect("progress serializes");
    body["session"] = json!(session);
    if let Some(task) = body.get_mut("task") {
        for role in ["anchor", "left", "right"] {
            let id = task[role].as_str().unwrap_or_default().to_string();
            task[format!("{role}_asset")] = json!(format!("/assets/{id}"));
        }
    }
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct SubmitBody {
    triplet_id: String,
    choice: String,
    session: String,
}

fn parse_choice(s: &str) -> Result<Choice, ServiceError> {
    match s {
        "left" => Ok(Choice::Left),
        "right" => Ok(Choice::Right),
        "skip" | "skipped" => Ok(Choice::Skipped),
        other => Err(ServiceError::BadRequest(format!(
            "choice must be left, right or skip, got {other:?}"
        ))),
    }
}

async fn submit(State(state): State<AppState>, body: Result<Json<SubmitBody>, axum::extract::rejection::JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let choice = parse_choice(&body.choice)?;
    let now = state.now();
    let ack = lock(&state).submit(&body.triplet_id, choice, &body.session, now)?;
    Ok(Json(ack).into_response())
}

#[derive(Deserialize)]
struct UndoBody {
    session: String,
}

async fn undo(State(state): State<AppState>, body: Result<Json<UndoBody>, axum::extract::rejection::JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let now = state.now();
    let undone = lock(&state).undo(&body.session, now)?;
    Ok(Json(undone).into_response())
}

#[derive(Deserialize)]
struct ProgressQuery {
    annotator: Option<String>,
}

async fn progress(State(state): State<AppState>, Query(q): Query<ProgressQuery>) -> Response {
    let now = state.now();
    let p = lock(&state).progress(q.annotator.as_deref(), now);
    Json(p).into_response()
}

async fn export(State(state): State<AppState>) -> Response {
    let body = lock(&state).export_jsonl();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("svg") => "image/svg+xml",
        Some("txt") => "text/plain; charset=utf-8",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

/// The first file (by name) in `dir` whose stem is `id`.
fn find_asset(dir: &Path, id: &str) -> Option<PathBuf> {
    let mut hits: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_stem().and_then(|s| s.to_str()) == Some(id))
        .collect();
    hits.sort();
    hits.into_iter().next()
}

async fn asset(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let id = ItemId::new(id).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    if id.as_str().starts_with('.') {
        return Err(ServiceError::BadRequest(format!("invalid asset id {:?}", id.as_str())).into());
    }
    let not_found = || ServiceError::NotFound(format!("no asset for item {:?}", id.as_str()));
    let dir = state.assets.as_deref().ok_or_else(not_found)?;
    let path = find_asset(dir, id.as_str()).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ServiceError::Storage(crate::Error::io(&path, e)))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}
