//! HTTP front end over [`SessionStore`].
//!
//! Bodies are parsed by hand rather than through the `Json` extractor so that
//! malformed input gets the same `{code, message}` error shape as everything else.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rankwise::session::{Answer, CreateRequest, SessionStore};
use rankwise::Error;
use serde_json::{json, Value};

pub struct ApiError(Error);

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match &self.0 {
            Error::SessionNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Exhausted => (StatusCode::CONFLICT, "exhausted"),
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::InvalidPair(..)
            | Error::Json(_)
            | Error::Config(_) => (StatusCode::BAD_REQUEST, "validation"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "code": code, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn decode<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(Error::Validation(format!("bad request body: {e}"))))
}

/// Runs a store call off the async workers; sampler steps can take a while.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> rankwise::Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(Error::Config(format!("worker failed: {e}")))),
    }
}

async fn create(State(store): State<Arc<SessionStore>>, body: Bytes) -> ApiResult {
    let req: CreateRequest = decode(&body)?;
    let id = blocking(move || store.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn next(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult {
    let next = blocking(move || store.next(&id)).await?;
    Ok(Json(next).into_response())
}

async fn answer(State(store): State<Arc<SessionStore>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let answer: Answer = decode(&body)?;
    let summary = blocking(move || store.submit(&id, &answer)).await?;
    Ok(Json(summary).into_response())
}

async fn ranking(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult {
    let ranking = blocking(move || store.ranking(&id)).await?;
    Ok(Json(ranking).into_response())
}

async fn export(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult {
    let export = blocking(move || store.export(&id)).await?;
    Ok(Json(export).into_response())
}

async fn fallback() -> Response {
    let body: Value = json!({ "code": "not_found", "message": "no such endpoint" });
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/answers", post(answer))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/sessions/{id}/export", get(export))
        .fallback(fallback)
        .with_state(store)
}
