//! Annotation REST API.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use hazeval_core::annotation::{self, AnnotationStore, AutomatedScores};
use hazeval_core::{Error, FieldError};

use crate::auth::Signer;

pub type Clock = fn() -> u64;

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<AnnotationStore>,
    pub signer: Signer,
    /// Automated scores per question id, for the human/automated section.
    pub automated: Arc<BTreeMap<String, AutomatedScores>>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: AnnotationStore, signer: Signer, automated: BTreeMap<String, AutomatedScores>) -> Self {
        Self {
            store: Arc::new(store),
            signer,
            automated: Arc::new(automated),
            clock: unix_now,
        }
    }
}

/// Routes under /api, plus an optional static directory for the UI bundle.
pub fn router(state: AppState, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/login", post(login))
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/tasks/{id}/annotation", post(submit))
        .route("/api/agreement", get(agreement))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            fields: Vec::new(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Unknown { .. } => Self::new(StatusCode::NOT_FOUND, e.to_string()),
            Error::Precondition(_) => Self::new(StatusCode::FORBIDDEN, e.to_string()),
            Error::Validation(fields) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                message: "annotation failed validation".into(),
                fields,
            },
            other => {
                tracing::error!(error = %other, "request failed");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn annotator(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
    state
        .signer
        .verify(token.trim())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "invalid token"))
}

async fn health(State(st): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "annotators": st.store.annotators().len(),
        "annotations": st.store.annotations().len(),
    }))
}

#[derive(Deserialize)]
struct Login {
    study_code: String,
}

async fn login(State(st): State<AppState>, Json(body): Json<Login>) -> ApiResult<Json<Value>> {
    let code = body.study_code.trim();
    let who = st
        .store
        .annotators()
        .into_iter()
        .find(|a| st.signer.study_code(a) == code)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown study code"))?;
    Ok(Json(json!({ "token": st.signer.issue(&who), "annotator_id": who })))
}

#[derive(Deserialize)]
struct TaskQuery {
    annotator: Option<String>,
}

async fn list_tasks(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<TaskQuery>) -> ApiResult<Json<Value>> {
    let me = annotator(&st, &headers)?;
    if q.annotator.as_deref().is_some_and(|a| a != me) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "tasks of another annotator"));
    }
    let tasks: Vec<Value> = st
        .store
        .tasks_for(&me)
        .into_iter()
        .map(|t| {
            json!({
                "task_id": t.task_id,
                "question_id": t.question_id,
                "status": t.status,
                "question": t.payload.as_ref().map(|p| p.question.as_str()),
            })
        })
        .collect();
    Ok(Json(json!({ "annotator_id": me, "tasks": tasks })))
}

async fn get_task(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let me = annotator(&st, &headers)?;
    let task = st.store.task(&id).ok_or_else(|| ApiError::from(Error::Unknown { kind: "task", name: id.clone() }))?;
    if task.annotator_id != me {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "task belongs to another annotator"));
    }
    Ok(Json(json!({ "task": task, "annotation": st.store.annotation(&id) })))
}

async fn submit(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> ApiResult<Json<Value>> {
    let me = annotator(&st, &headers)?;
    let now = (st.clock)();
    let store = st.store.clone();
    let ack = tokio::task::spawn_blocking(move || store.submit(&me, &id, &body, now))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!(ack)))
}

async fn agreement(State(st): State<AppState>) -> Json<Value> {
    let report = annotation::agreement_report(&st.store.tasks(), &st.store.annotations(), &st.automated);
    Json(json!(report))
}
