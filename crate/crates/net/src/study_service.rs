//! HTTP front end for a [`StudyStore`].

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use webforge_core::study::{Response as Answer, ScoreRecord, StudyError, StudyStore, StudyType};

#[derive(Clone)]
pub struct StudyService {
    store: Arc<StudyStore>,
    secret: Arc<str>,
    media_root: Arc<PathBuf>,
    ui_root: Option<Arc<PathBuf>>,
}

impl StudyService {
    pub fn new(store: Arc<StudyStore>, secret: &str, media_root: impl Into<PathBuf>) -> Self {
        Self {
            store,
            secret: secret.into(),
            media_root: Arc::new(media_root.into()),
            ui_root: None,
        }
    }

    /// Serves a built UI bundle from `/`.
    pub fn with_ui(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_root = Some(Arc::new(dir.into()));
        self
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/tasks/next", get(next_task))
            .route("/scores", post(submit))
            .route("/results", get(results))
            .route("/media/{*path}", get(media))
            .fallback(get(ui))
            .with_state(self)
    }
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    service: StudyService,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve_on(service, listener, shutdown).await
}

pub async fn serve_on(
    service: StudyService,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, service.router())
        .with_graceful_shutdown(shutdown)
        .await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match &e {
            StudyError::UnknownStudy(_) | StudyError::UnknownTask(_) => StatusCode::NOT_FOUND,
            StudyError::DuplicateSubmission { .. } => StatusCode::CONFLICT,
            StudyError::FormMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::InvalidTask(_) => StatusCode::BAD_REQUEST,
            StudyError::Corrupt(_) | StudyError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(rename = "type")]
    study_type: Option<String>,
    pid: Option<String>,
}

async fn next_task(State(svc): State<StudyService>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let study_type: StudyType = q.study_type.ok_or_else(|| bad_request("missing type"))?.parse()?;
    let pid = q.pid.filter(|p| !p.is_empty()).ok_or_else(|| bad_request("missing pid"))?;
    let store = svc.store.clone();
    let assignment = tokio::task::spawn_blocking(move || store.next_task(study_type, &pid))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(assignment).into_response())
}

#[derive(Deserialize)]
struct Submission {
    task_id: String,
    participant_id: String,
    response: Answer,
}

async fn submit(
    State(svc): State<StudyService>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let token = headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if token != Some(&*svc.secret) {
        return Err(ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()));
    }
    let sub: Submission = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
    let record = ScoreRecord {
        task_id: sub.task_id,
        participant_id: sub.participant_id,
        response: sub.response,
        submitted_at: Utc::now(),
    };
    let store = svc.store.clone();
    let accepted = tokio::task::spawn_blocking(move || store.submit(record))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(accepted)).into_response())
}

#[derive(Deserialize)]
struct ResultsQuery {
    #[serde(rename = "type")]
    study_type: Option<String>,
}

async fn results(State(svc): State<StudyService>, Query(q): Query<ResultsQuery>) -> Result<Response, ApiError> {
    let study_type: StudyType = q.study_type.ok_or_else(|| bad_request("missing type"))?.parse()?;
    Ok(Json(svc.store.results(study_type)).into_response())
}

async fn media(State(svc): State<StudyService>, UrlPath(path): UrlPath<String>) -> Result<Response, ApiError> {
    serve_file(&svc.media_root, &path).await
}

async fn ui(State(svc): State<StudyService>, uri: axum::http::Uri) -> Result<Response, ApiError> {
    let Some(root) = svc.ui_root.clone() else {
        return Err(ApiError(StatusCode::NOT_FOUND, "not found".into()));
    };
    let path = uri.path().trim_start_matches('/');
    let path = if path.is_empty() { "index.html" } else { path };
    serve_file(&root, path).await
}

/// Resolves `rel` under `root`, refusing anything that would escape it.
fn safe_join(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.components().all(|c| matches!(c, Component::Normal(_))) {
        Some(root.join(rel))
    } else {
        None
    }
}

async fn serve_file(root: &Path, rel: &str) -> Result<Response, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("{rel} not found"));
    let path = safe_join(root, rel).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    let mime = mime_for(&path);
    let mut resp = bytes.into_response();
    resp.headers_mut().insert(CONTENT_TYPE, HeaderValue::from_static(mime));
    Ok(resp)
}

fn mime_for(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "svg" => "image/svg+xml",
        "avif" => "image/avif",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traversal_refused() {
        let root = Path::new("/srv/media");
        assert_eq!(safe_join(root, "a/b.png"), Some(root.join("a/b.png")));
        assert_eq!(safe_join(root, "../etc/passwd"), None);
        assert_eq!(safe_join(root, "/etc/passwd"), None);
    }
}
