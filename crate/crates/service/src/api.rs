//! HTTP routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::{json, Value};

use segtune_core::error::ConfigError;

use crate::queue::DeleteError;
use crate::request::{RequestError, TuneRequest};
use crate::task::{TaskId, TaskStatus};
use crate::TuningService;

#[derive(Debug)]
pub enum ApiError {
    BadRequest(Vec<ConfigError>),
    Unprocessable(Vec<ConfigError>),
    NotFound,
    Conflict(String),
    Internal(String),
}

impl From<RequestError> for ApiError {
    fn from(e: RequestError) -> Self {
        match e {
            RequestError::Invalid(v) => Self::BadRequest(v),
            RequestError::Unreadable(v) => Self::Unprocessable(v),
        }
    }
}

fn field_list(errors: &[ConfigError]) -> Value {
    errors.iter().map(|e| json!({"field": e.field, "message": e.message})).collect()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, body) = match self {
            Self::BadRequest(v) => {
                (StatusCode::BAD_REQUEST, json!({"error": "invalid request", "fields": field_list(&v)}))
            }
            Self::Unprocessable(v) => {
                (StatusCode::UNPROCESSABLE_ENTITY, json!({"error": "unreadable input", "fields": field_list(&v)}))
            }
            Self::NotFound => (StatusCode::NOT_FOUND, json!({"error": "no such task"})),
            Self::Conflict(m) => (StatusCode::CONFLICT, json!({"error": m})),
            Self::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": m})),
        };
        (code, Json(body)).into_response()
    }
}

pub fn router(service: Arc<TuningService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/tasks", get(list_tasks).post(submit))
        .route("/tasks/{id}", get(status).delete(delete_task))
        .route("/tasks/{id}/result", get(result))
        .with_state(service)
}

fn parse_id(raw: &str) -> Result<TaskId, ApiError> {
    raw.parse().map_err(|_| ApiError::NotFound)
}

async fn healthz(State(svc): State<Arc<TuningService>>) -> Json<Value> {
    let (queued, running) = svc.queue().counts();
    Json(json!({"status": "ok", "queued": queued, "running": running}))
}

async fn submit(State(svc): State<Arc<TuningService>>, body: Bytes) -> Result<Response, ApiError> {
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::BadRequest(vec![ConfigError::new("body", format!("malformed JSON: {e}"))]))?;
    let request = TuneRequest::from_json(value)?;
    let checker = svc.clone();
    let checked = request.clone();
    // reads the reference masks, so keep it off the async workers
    tokio::task::spawn_blocking(move || checked.prepare(checker.config().workers).map(|_| ()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let id = svc.queue().submit(request).map_err(|e| ApiError::Internal(e.to_string()))?;
    log::info!("task {id} queued");
    Ok((StatusCode::ACCEPTED, Json(json!({"id": id, "status": TaskStatus::Queued}))).into_response())
}

async fn status(State(svc): State<Arc<TuningService>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let summary = svc.queue().summary(&parse_id(&id)?).ok_or(ApiError::NotFound)?;
    Ok(Json(summary).into_response())
}

async fn result(State(svc): State<Arc<TuningService>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let task = svc.queue().get(&parse_id(&id)?).ok_or(ApiError::NotFound)?;
    match (task.status, task.result) {
        (TaskStatus::Done, Some(outcome)) => Ok(Json(outcome).into_response()),
        (TaskStatus::Failed, _) => Err(ApiError::Conflict(format!("task failed: {}", task.error.unwrap_or_default()))),
        (s, _) => Err(ApiError::Conflict(format!("task is {}", serde_json::to_value(s).unwrap_or_default()))),
    }
}

async fn delete_task(State(svc): State<Arc<TuningService>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match svc.queue().delete(&parse_id(&id)?) {
        Ok(()) => Ok(StatusCode::NO_CONTENT),
        Err(DeleteError::NotFound) => Err(ApiError::NotFound),
        Err(DeleteError::Running) => Err(ApiError::Conflict("task is running".into())),
    }
}

/// Enumerating ids is only allowed when the service was started with the
/// admin listing enabled.
async fn list_tasks(State(svc): State<Arc<TuningService>>) -> Result<Response, ApiError> {
    if !svc.config().admin_list {
        return Err(ApiError::NotFound);
    }
    Ok(Json(svc.queue().list()).into_response())
}
