//! Admin and synchronous-evaluation HTTP API.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use iip_core::directory::{DeviceRecord, DirectoryError};
use iip_core::engine::{Change, EngineError, PolicyEngine};
use iip_core::lint::Diagnostic;
use iip_core::model::PolicySpec;
use iip_core::store::StoreError;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    diagnostics: Vec<Diagnostic>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            diagnostics: Vec::new(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("no {what} `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "message": self.message});
        if !self.diagnostics.is_empty() {
            body["diagnostics"] = json!(self.diagnostics);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::DuplicateId(_) => ApiError::new(StatusCode::CONFLICT, "DuplicateId", e.to_string()),
            StoreError::ValidationFailed { ref diagnostics, .. } => ApiError {
                diagnostics: diagnostics.clone(),
                ..ApiError::new(StatusCode::BAD_REQUEST, "ValidationFailed", e.to_string())
            },
            other => {
                tracing::error!("policy store: {other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreUnavailable", other.to_string())
            }
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownDevice { .. } => ApiError::new(StatusCode::NOT_FOUND, "UnknownDevice", e.to_string()),
            EngineError::InvalidChange(_) => ApiError::new(StatusCode::BAD_REQUEST, "InvalidChange", e.to_string()),
        }
    }
}

impl From<DirectoryError> for ApiError {
    fn from(e: DirectoryError) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidDevice", e.to_string())
    }
}

/// JSON body parsing that reports every malformed body as 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MalformedBody", e.to_string()))
}

#[derive(Serialize)]
struct Added {
    id: String,
    warnings: Vec<Diagnostic>,
}

async fn add_policy(State(engine): State<Arc<PolicyEngine>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let spec: PolicySpec = parse(&body)?;
    let id = spec.id.clone();
    let warnings = engine.store().add(spec)?;
    tracing::info!(policy = %id, "policy added");
    Ok((StatusCode::CREATED, Json(Added { id, warnings })))
}

async fn list_policies(State(engine): State<Arc<PolicyEngine>>) -> Json<Vec<PolicySpec>> {
    Json(engine.store().snapshot().policies().map(|p| p.spec.clone()).collect())
}

async fn get_policy(State(engine): State<Arc<PolicyEngine>>, Path(id): Path<String>) -> Result<Json<PolicySpec>, ApiError> {
    engine
        .store()
        .get(&id)
        .map(|p| Json(p.spec.clone()))
        .ok_or_else(|| ApiError::not_found("policy", &id))
}

async fn remove_policy(State(engine): State<Arc<PolicyEngine>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match engine.store().remove(&id)? {
        Some(_) => {
            tracing::info!(policy = %id, "policy removed");
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(ApiError::not_found("policy", &id)),
    }
}

async fn upsert_device(State(engine): State<Arc<PolicyEngine>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let record: DeviceRecord = parse(&body)?;
    let id = record.id.clone();
    let previous = engine.directory().upsert(record)?;
    let status = if previous.is_some() { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(json!({"id": id}))))
}

async fn get_device(State(engine): State<Arc<PolicyEngine>>, Path(id): Path<String>) -> Result<Json<DeviceRecord>, ApiError> {
    engine
        .directory()
        .get(&id)
        .map(|r| Json(r.as_ref().clone()))
        .ok_or_else(|| ApiError::not_found("device", &id))
}

async fn evaluate(State(engine): State<Arc<PolicyEngine>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let change: Change = parse(&body)?;
    let effect = tokio::task::spawn_blocking(move || engine.evaluate_change(&change))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    Ok(Json(effect))
}

async fn metrics(State(engine): State<Arc<PolicyEngine>>) -> impl IntoResponse {
    Json(engine.metrics())
}

pub fn router(engine: Arc<PolicyEngine>) -> Router {
    Router::new()
        .route("/v1/policies", post(add_policy).get(list_policies))
        .route("/v1/policies/{id}", get(get_policy).delete(remove_policy))
        .route("/v1/devices", post(upsert_device))
        .route("/v1/devices/{id}", get(get_device))
        .route("/v1/changes", post(evaluate))
        .route("/v1/metrics", get(metrics))
        .with_state(engine)
}
