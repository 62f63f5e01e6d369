//! HTTP routes for the task UI.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::services::ServeDir;

use crate::session::{Feedback, ResponseInput, SessionSummary, UiSchedule};
use crate::store::{CreateSession, SessionStore};
use crate::SessionError;

impl SessionError {
    pub fn status(&self) -> StatusCode {
        match self {
            SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::OutOfOrder { .. }
            | SessionError::DuplicateTrial(_)
            | SessionError::Complete(_) => StatusCode::CONFLICT,
            SessionError::UnknownTrial(_)
            | SessionError::InvalidResponse(_)
            | SessionError::InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

async fn create(
    State(store): State<Arc<SessionStore>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionSummary>), SessionError> {
    let session = store.create(req)?;
    Ok((StatusCode::CREATED, Json(session.summary())))
}

async fn schedule(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Json<UiSchedule>, SessionError> {
    Ok(Json(store.ui_schedule(&id)?))
}

async fn respond(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Json(input): Json<ResponseInput>,
) -> Result<Json<Feedback>, SessionError> {
    Ok(Json(store.post_response(&id, input)?))
}

async fn export(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> Result<Response, SessionError> {
    let csv = store.export_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

/// API routes, with `static_dir` served under `/` when given.
pub fn router(store: Arc<SessionStore>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/schedule", get(schedule))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/export", get(export))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(
    addr: SocketAddr,
    store: Arc<SessionStore>,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
