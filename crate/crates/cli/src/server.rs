//! HTTP front end over a loaded checkpoint.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use tokio::sync::Semaphore;

use crate::service::{GenerateRequest, InterpolateRequest, RequestError, Studio};

#[derive(Clone)]
struct AppState {
    studio: Arc<Studio>,
    workers: Arc<Semaphore>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<RequestError> for ApiError {
    fn from(e: RequestError) -> Self {
        let status = match e {
            RequestError::NotFound(_) => StatusCode::NOT_FOUND,
            RequestError::Invalid(_) => StatusCode::BAD_REQUEST,
            RequestError::Failed(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

/// Every body problem, syntax or schema, is a 400 carrying serde's
/// diagnostic (which names the offending field).
fn body<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|rejection| ApiError(StatusCode::BAD_REQUEST, rejection.body_text()))
}

/// Router over `studio`; at most `workers` generations run at once, the
/// rest wait for a permit.
pub fn router(studio: Arc<Studio>, workers: usize) -> Router {
    let state = AppState {
        studio,
        workers: Arc::new(Semaphore::new(workers.max(1))),
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/embedding", get(embedding))
        .route("/api/styles/{id}", get(style))
        .route("/api/generate", post(generate))
        .route("/api/interpolate", post(interpolate))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let ck = state.studio.checkpoint();
    Json(json!({
        "status": "ok",
        "variant": ck.config.variant,
        "step": ck.step,
        "style_dim": ck.generator.config().style_dim,
        "resolution": ck.generator.resolution(),
    }))
}

async fn embedding(State(state): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(state.studio.embedding()?.clone()).into_response())
}

async fn style(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.studio.style(&id)?).into_response())
}

async fn run_generation(state: AppState, request: GenerateRequest) -> Result<Response, ApiError> {
    let _permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError(StatusCode::SERVICE_UNAVAILABLE, e.to_string()))?;
    let studio = state.studio.clone();
    let response = tokio::task::spawn_blocking(move || studio.generate(&request))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(response).into_response())
}

async fn generate(
    State(state): State<AppState>,
    payload: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    run_generation(state, body(payload)?).await
}

async fn interpolate(
    State(state): State<AppState>,
    payload: Result<Json<InterpolateRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let request: InterpolateRequest = body(payload)?;
    let sum: f64 = request.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("weights sum to {sum}, expected 1 within 1e-6"),
        ));
    }
    run_generation(state, request.into()).await
}

/// Serves until interrupted.
pub async fn serve(studio: Studio, bind: SocketAddr) -> std::io::Result<()> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(studio), workers))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
