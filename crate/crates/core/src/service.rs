//! HTTP review service over a [`Workbench`].
//!
//! JSON in and out; every error is `{error_code, message}` with status 400,
//! 404, 409 or 500. Run execution happens on a blocking worker after
//! `POST /runs` has persisted the run.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::corpus::EntityLabel;
use crate::eval::Judgment;
use crate::workbench::{CreateRunRequest, ItemFilter, ReportFormat, Workbench, WorkbenchError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error_code: code.into(), message: message.into() } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<WorkbenchError> for ApiError {
    fn from(e: WorkbenchError) -> Self {
        let (status, code) = match &e {
            WorkbenchError::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
            WorkbenchError::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            WorkbenchError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            WorkbenchError::RunNotComplete { .. } => (StatusCode::CONFLICT, "run_not_complete"),
            WorkbenchError::ReportUnavailable { .. } => (StatusCode::CONFLICT, "report_unavailable"),
            WorkbenchError::Storage { .. } | WorkbenchError::CorruptLog { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage_error"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, WorkbenchError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn spawn_execution(wb: Arc<Workbench>, run_id: String) {
    tokio::task::spawn_blocking(move || {
        if let Err(e) = wb.execute_run(&run_id) {
            tracing::error!(%run_id, error = %e, "run execution failed");
        }
    });
}

async fn create_run(State(wb): State<Arc<Workbench>>, body: Result<Json<CreateRunRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let wb2 = wb.clone();
    let (run, created) = blocking(move || wb2.create_run(&req)).await?;
    if created {
        spawn_execution(wb, run.run_id.clone());
    }
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(run)).into_response())
}

async fn list_runs(State(wb): State<Arc<Workbench>>) -> impl IntoResponse {
    Json(wb.runs())
}

async fn get_run(State(wb): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(wb.run(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct ItemsQuery {
    #[serde(default)]
    status: ItemFilter,
    #[serde(default)]
    category: Option<String>,
}

async fn list_items(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
    query: Result<Query<ItemsQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let category = q
        .category
        .map(|c| c.parse::<EntityLabel>())
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(wb.items(&id, q.status, category)?).into_response())
}

async fn get_item(State(wb): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(wb.item(&id)?).into_response())
}

async fn get_audit(State(wb): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(wb.audit(&id)?).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub answer_correct: bool,
    pub entity_exists: bool,
    pub reviewer: String,
}

async fn submit_judgment(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
    body: Result<Json<JudgmentRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    if req.reviewer.trim().is_empty() {
        return Err(ApiError::bad_request("reviewer is required"));
    }
    let judgment = Judgment { answer_correct: req.answer_correct, entity_exists: req.entity_exists };
    let record = blocking(move || wb.submit_judgment(&id, judgment, req.reviewer.trim())).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_metrics(State(wb): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(wb.metrics(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default = "default_format")]
    format: ReportFormat,
}

fn default_format() -> ReportFormat {
    ReportFormat::Json
}

async fn get_report(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
    query: Result<Query<ReportQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let body = wb.report(&id, q.format)?;
    let content_type = match q.format {
        ReportFormat::Table => "text/plain; charset=utf-8",
        ReportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(wb: Arc<Workbench>) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/items", get(list_items))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/report", get(get_report))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/audit", get(get_audit))
        .route("/items/{id}/judgment", post(submit_judgment))
        .fallback(not_found)
        .with_state(wb)
}

/// Serves until Ctrl-C. Runs left unfinished by a previous process are
/// resumed first.
pub async fn serve(wb: Arc<Workbench>, addr: SocketAddr) -> std::io::Result<()> {
    for run_id in wb.unfinished_runs() {
        tracing::info!(%run_id, "resuming unfinished run");
        spawn_execution(wb.clone(), run_id);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(wb))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
