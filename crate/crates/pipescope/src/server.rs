//! Local HTTP API for the browser UI.
//!
//! | method | path | result |
//! |--------|------|--------|
//! | POST | `/api/jobs` | submit a config, `201 {id, warnings}` |
//! | GET | `/api/jobs` | all jobs |
//! | GET | `/api/jobs/{id}` | job state |
//! | DELETE | `/api/jobs/{id}` | cancel |
//! | GET | `/api/jobs/{id}/panorama` | PNG once done |
//! | GET | `/api/jobs/{id}/report` | run report once done |
//! | GET | `/api/config/default` | default config |
//! | GET | `/api/source/frames/{i}?source=uri` | decoded frame as PNG |
//! | POST | `/api/preview/unwrap` | unwrapped strip as PNG |

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pipescope_core::imageio::encode_rgb_png;
use pipescope_core::ingest::{open_source_with, source_backends, FrameSource, IngestError};
use pipescope_core::{preview_unwrap, AnnulusGeometry, PipelineConfig, UnwrapSpec};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::jobs::{JobManager, JobState};

#[derive(Clone)]
pub struct AppState {
    pub jobs: JobManager,
    /// Source used by frame and preview requests that do not name one.
    pub default_source: Option<String>,
    sources: Arc<Mutex<HashMap<String, Arc<dyn FrameSource>>>>,
}

impl AppState {
    pub fn new(jobs: JobManager, default_source: Option<String>) -> Self {
        Self {
            jobs,
            default_source,
            sources: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    fn source(&self, uri: Option<&str>) -> Result<Arc<dyn FrameSource>, ApiError> {
        let uri = uri
            .map(str::to_owned)
            .or_else(|| self.default_source.clone())
            .ok_or_else(|| ApiError::bad_request("no source given and no default source configured"))?;
        if let Some(s) = self.sources.lock().unwrap().get(&uri) {
            return Ok(s.clone());
        }
        let src: Arc<dyn FrameSource> = open_source_with(&source_backends(), &uri, None)
            .map_err(ApiError::from)?
            .into();
        self.sources.lock().unwrap().insert(uri, src.clone());
        Ok(src)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let status = match e {
            IngestError::NotFound(_) | IngestError::IndexOutOfRange { .. } => StatusCode::NOT_FOUND,
            IngestError::UnsupportedFormat(_) | IngestError::EmptySource(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn submit_job(
    State(st): State<AppState>,
    Json(config): Json<PipelineConfig>,
) -> Result<Response, ApiError> {
    let job = st
        .jobs
        .submit(config)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": job.id, "warnings": job.warnings })),
    )
        .into_response())
}

async fn list_jobs(State(st): State<AppState>) -> Response {
    Json(st.jobs.list()).into_response()
}

async fn get_job(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let job = st.jobs.get(id).ok_or_else(|| ApiError::not_found(format!("no job {id}")))?;
    Ok(Json(job).into_response())
}

async fn cancel_job(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let job = st.jobs.cancel(id).ok_or_else(|| ApiError::not_found(format!("no job {id}")))?;
    Ok(Json(job).into_response())
}

fn finished_report(st: &AppState, id: u64) -> Result<Box<pipescope_core::RunReport>, ApiError> {
    let job = st.jobs.get(id).ok_or_else(|| ApiError::not_found(format!("no job {id}")))?;
    match job.state {
        JobState::Done { report } => Ok(report),
        _ => Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} has not finished"))),
    }
}

async fn job_panorama(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let report = finished_report(&st, id)?;
    let path = report.output_dir.join("panorama.png");
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::GONE, format!("{}: {e}", path.display())))?;
    Ok(png(bytes))
}

async fn job_report(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    Ok(Json(finished_report(&st, id)?).into_response())
}

async fn default_config() -> Response {
    Json(PipelineConfig::default()).into_response()
}

#[derive(Debug, Deserialize)]
pub struct SourceQuery {
    pub source: Option<String>,
}

async fn source_frame(
    State(st): State<AppState>,
    Path(index): Path<usize>,
    Query(q): Query<SourceQuery>,
) -> Result<Response, ApiError> {
    let bytes = blocking(move || {
        let src = st.source(q.source.as_deref())?;
        let frame = src.read_frame(index)?;
        encode_rgb_png(&frame.to_rgb_image())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    #[serde(default)]
    pub source: Option<String>,
    pub frame: usize,
    #[serde(default)]
    pub geometry: AnnulusGeometry,
    #[serde(default)]
    pub unwrap: UnwrapSpec,
}

async fn preview(State(st): State<AppState>, Json(req): Json<PreviewRequest>) -> Result<Response, ApiError> {
    let bytes = blocking(move || {
        let src = st.source(req.source.as_deref())?;
        let frame = src.read_frame(req.frame)?;
        let strip = preview_unwrap(&frame, &req.geometry, &req.unwrap)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
        encode_rgb_png(&strip.to_rgb_image())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await?;
    Ok(png(bytes))
}

/// Builds the API router; static files from `ui_dir` are served for every other path.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/jobs", post(submit_job).get(list_jobs))
        .route("/api/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/api/jobs/{id}/panorama", get(job_panorama))
        .route("/api/jobs/{id}/report", get(job_report))
        .route("/api/config/default", get(default_config))
        .route("/api/source/frames/{index}", get(source_frame))
        .route("/api/preview/unwrap", post(preview))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: std::net::SocketAddr, state: AppState, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir)).await
}
