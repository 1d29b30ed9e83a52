use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use roomrec_core::audio::{wav, AudioRecord};
use tracing::info;

use crate::api::*;
use crate::error::ApiError;
use crate::state::{AppState, LabelError};

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/api/v1/recognize", post(recognize))
        .route("/api/v1/samples", post(samples))
        .route("/api/v1/labels", post(label))
        .route("/api/v1/sessions/{id}", get(session))
        .route("/api/v1/tasks", get(tasks))
        .route("/api/v1/tasks/{id}", get(task))
        .route("/api/v1/rooms", get(rooms))
        .route("/api/v1/metrics", get(metrics))
        .route("/api/v1/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

async fn log_request(req: Request, next: Next) -> Response {
    let (method, path) = (req.method().clone(), req.uri().path().to_string());
    let start = Instant::now();
    let res = next.run(req).await;
    info!(%method, %path, status = res.status().as_u16(), ms = start.elapsed().as_secs_f64() * 1e3, "request");
    res
}

fn decode(body: &[u8]) -> Result<Vec<AudioRecord<f32>>, ApiError> {
    wav::from_bytes::<f32>(body).map_err(ApiError::bad_audio)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn recognize(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<RecognizeResponse> {
    let mut records = decode(&body)?;
    if records.len() != 1 {
        return Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            message: format!("expected exactly one record, got {}", records.len()),
            field: Some("data".into()),
        });
    }
    let record = records.pop().expect("one record");
    match state.recognize(&record) {
        None => Err(ApiError::new(StatusCode::CONFLICT, "no trained model is available yet")),
        Some(Err(e)) => Err(ApiError::bad_audio(e)),
        Some(Ok(r)) => Ok(Json(r)),
    }
}

async fn samples(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<SamplesResponse> {
    let records = decode(&body)?;
    if records.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "batch holds no records"));
    }
    if records.len() > state.config.max_batch_records {
        return Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            message: format!("batch of {} exceeds {} records", records.len(), state.config.max_batch_records),
            field: Some("data".into()),
        });
    }
    let res = blocking(move || state.create_session(records)).await?;
    res.map(Json).map_err(ApiError::bad_audio)
}

async fn label(State(state): State<Arc<AppState>>, Json(req): Json<LabelRequest>) -> ApiResult<LabelResponse> {
    let res = blocking(move || state.label_session(&req.session_id, &req.label)).await?;
    res.map(Json).map_err(|e| {
        let status = match e {
            LabelError::UnknownSession => StatusCode::NOT_FOUND,
            LabelError::AlreadyLabeled => StatusCode::CONFLICT,
            LabelError::BadLabel => StatusCode::BAD_REQUEST,
            LabelError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    })
}

async fn session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    state
        .session(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown or expired session `{id}`")))
}

async fn tasks(State(state): State<Arc<AppState>>) -> Json<TasksResponse> {
    Json(TasksResponse { tasks: state.tasks() })
}

async fn task(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<TaskView> {
    state
        .task(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown task `{id}`")))
}

async fn rooms(State(state): State<Arc<AppState>>) -> Json<RoomsResponse> {
    Json(state.rooms())
}

async fn metrics(State(state): State<Arc<AppState>>) -> ApiResult<MetricsResponse> {
    state
        .metrics()
        .map(|m| Json((*m).clone()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no evaluation yet; no retrain has finished"))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model_version: state.model_version(),
    })
}
