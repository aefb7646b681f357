//! HTTP+JSON front end for the interactive judgment loop.
//!
//! `POST /sessions`, `POST /sessions/{id}/answer`, `GET /sessions/{id}`.
//! Backend calls are blocking, so every handler runs the session manager on
//! the blocking pool.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use quandary::backends::BackendError;
use quandary::session::{SessionError, SessionManager, SessionState};
use quandary::{JudgmentDistribution, Question};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub situation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub judgment: JudgmentDistribution,
    pub question: Question,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitAnswer {
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub judgment: JudgmentDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<Question>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(SessionError);

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match &self.0 {
            SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::TurnLimit(_) => StatusCode::CONFLICT,
            SessionError::EmptySituation | SessionError::EmptyAnswer => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Backend(BackendError::Unavailable(_)) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::Backend(BackendError::InvalidRequest(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Backend(_) => StatusCode::BAD_GATEWAY,
            SessionError::Io(_) | SessionError::Serde(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(SessionError::Io(std::io::Error::other(e.to_string())))),
    }
}

async fn create(State(m): State<Arc<SessionManager>>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let state = blocking(move || m.create_session(&req.situation)).await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: state.session_id.clone(),
            judgment: state.base_judgment,
            question: state.question.clone().expect("fresh session has a question"),
        }),
    ))
}

async fn answer(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Json(req): Json<SubmitAnswer>,
) -> Result<Json<TurnResult>, ApiError> {
    let state = blocking(move || m.answer_turn(&id, &req.answer)).await?;
    Ok(Json(TurnResult {
        judgment: *state.judgment(),
        question: state.question.clone(),
        terminal: state.terminal,
    }))
}

async fn show(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    Ok(Json(blocking(move || m.get_session(&id)).await?))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/answer", post(answer))
        .with_state(manager)
}

/// Serves until ctrl-c.
pub async fn serve(manager: Arc<SessionManager>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
