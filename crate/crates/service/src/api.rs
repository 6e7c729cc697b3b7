use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cmind_core::corpus::load_archive_bytes;
use cmind_core::prompts::BugReport;
use serde_json::json;

use crate::store::JobId;
use crate::{AppState, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let code = match &self {
            ServiceError::InvalidReport
            | ServiceError::ArchiveRejected(_)
            | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownJob(_) => StatusCode::NOT_FOUND,
            ServiceError::NotReady(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if code == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}: {self}", self.kind());
        }
        let body = json!({"error": self.kind(), "message": self.to_string()});
        (code, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_upload_bytes;
    Router::new()
        .route("/jobs", post(submit))
        .route("/jobs/{id}", get(status))
        .route("/jobs/{id}/result", get(result))
        .route("/healthz", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn bad(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

async fn submit(State(state): State<AppState>, mut form: Multipart) -> Result<Response, ServiceError> {
    let mut report: Option<String> = None;
    let mut source: Option<Bytes> = None;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name() {
            Some("report") => report = Some(field.text().await.map_err(bad)?),
            Some("source") => source = Some(field.bytes().await.map_err(bad)?),
            _ => {}
        }
    }
    let report = report.ok_or(ServiceError::InvalidReport)?;
    BugReport::new(report.clone()).map_err(|_| ServiceError::InvalidReport)?;
    let source = source.ok_or_else(|| ServiceError::ArchiveRejected("missing `source` field".into()))?;

    let store = state.store.clone();
    let record = tokio::task::spawn_blocking(move || {
        // Full validation up front so a bad archive is refused at the door.
        load_archive_bytes(&source, "upload")
            .map_err(|e| ServiceError::ArchiveRejected(format!("{}: {e}", e.kind())))?;
        store.create(&report, &source)
    })
    .await
    .map_err(|e| bad(format!("submission task failed: {e}")))??;

    log::info!("job {} queued", record.id);
    state.pool.enqueue(record.id.clone());
    Ok((StatusCode::ACCEPTED, Json(json!({"id": record.id}))).into_response())
}

async fn status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let id: JobId = id.parse()?;
    let record = state.store.get(&id)?;
    Ok(Json(json!({
        "id": record.id,
        "status": record.status,
        "submitted_at": record.submitted_at,
    }))
    .into_response())
}

async fn result(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let id: JobId = id.parse()?;
    let body = state.store.result_json(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}
