//! HTTP/JSON front end for generation sessions, benchmarks and verification.
//!
//! Sessions live in memory and are keyed by UUID. Engine work runs on the
//! blocking pool; a session is locked for the duration of one chunk.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use uuid::Uuid;

use vace_core::bench::{run_benchmark, BenchRun};
use vace_core::config::{Config, Faults};
use vace_core::pipeline::{ChunkResult, GenerationSession, Model};
use vace_core::rng::Seed;
use vace_core::service::{CacheRepair, CacheReport, ChunkRequest, ErrorBody, OpenSession, SessionInfo, VerifyRequest};
use vace_core::verify::{run_verify, VerifyReport};
use vace_core::Error;

type Shared = Arc<Mutex<GenerationSession>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<Uuid, Shared>>>,
}

impl AppState {
    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        let key = Uuid::parse_str(id).map_err(|_| ApiError::NotFound(id.to_string()))?;
        self.sessions.lock().unwrap().get(&key).cloned().ok_or_else(|| ApiError::NotFound(id.to_string()))
    }
}

#[derive(Debug)]
pub enum ApiError {
    Engine(Error),
    NotFound(String),
    Busy,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Engine(e)
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Busy => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Engine(e) => match e {
                Error::InvalidInput(_) | Error::Config(_) | Error::Dimension(_) | Error::Format { .. } => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                Error::Precondition(_) | Error::Chunking(_) => StatusCode::CONFLICT,
                Error::CacheIntegrity(_) | Error::NonFinite(_) | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let error = match &self {
            ApiError::Engine(e) => e.to_string(),
            ApiError::NotFound(id) => format!("no session {id}"),
            ApiError::Busy => "worker task failed".to_string(),
        };
        (self.status(), Json(ErrorBody { error })).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|_| ApiError::Busy)?
}

fn info(id: Uuid, s: &GenerationSession) -> SessionInfo {
    SessionInfo {
        id: id.to_string(),
        mode: s.mode,
        architecture: s.architecture,
        alpha: s.alpha.0,
        chunk_index: s.chunk_index,
        available_chunks: s.available_chunks(),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn open_session(State(state): State<AppState>, Json(req): Json<OpenSession>) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let session = blocking(move || {
        req.config.model.validate()?;
        let seed = Seed(req.config.seed);
        let model = Model::with_faults(req.config.model, seed.derive("model"), req.faults)?;
        Ok(GenerationSession::open_with_faults(Arc::new(model), req.inputs, req.architecture, req.alpha, seed, req.faults)?)
    })
    .await?;
    let id = Uuid::new_v4();
    let body = info(id, &session);
    state.sessions.lock().unwrap().insert(id, Arc::new(Mutex::new(session)));
    tracing::info!(%id, mode = %body.mode, "session opened");
    Ok((StatusCode::CREATED, Json(body)))
}

async fn session_info(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let shared = state.get(&id)?;
    let s = shared.lock().unwrap();
    Ok(Json(info(Uuid::parse_str(&id).unwrap(), &s)))
}

async fn close_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let key = Uuid::parse_str(&id).map_err(|_| ApiError::NotFound(id.clone()))?;
    match state.sessions.lock().unwrap().remove(&key) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::NotFound(id)),
    }
}

async fn generate_chunk(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ChunkRequest>,
) -> Result<Json<ChunkResult>, ApiError> {
    let shared = state.get(&id)?;
    let result = blocking(move || {
        let mut s = shared.lock().unwrap();
        let noise = match req.noise {
            Some(n) => n,
            None => s.next_noise()?,
        };
        Ok(s.generate_chunk(&noise)?)
    })
    .await?;
    Ok(Json(result))
}

fn cache_report(s: &GenerationSession) -> CacheReport {
    CacheReport { chunk_index: s.chunk_index, hint_compute_count: s.hint_compute_count(), dit: s.cache_dump() }
}

async fn cache(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CacheReport>, ApiError> {
    let shared = state.get(&id)?;
    let s = shared.lock().unwrap();
    Ok(Json(cache_report(&s)))
}

async fn repair_cache(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(repair): Json<CacheRepair>,
) -> Result<Json<CacheReport>, ApiError> {
    let shared = state.get(&id)?;
    blocking(move || {
        let mut s = shared.lock().unwrap();
        match repair {
            CacheRepair::Strip => s.strip_reference_cache()?,
            CacheRepair::Recompute => s.recompute_cache()?,
        }
        Ok(Json(cache_report(&s)))
    })
    .await
}

async fn bench(Json(config): Json<Config>) -> Result<Json<BenchRun>, ApiError> {
    blocking(move || Ok(Json(run_benchmark(&config)?))).await
}

async fn verify(Json(req): Json<VerifyRequest>) -> Result<Json<VerifyReport>, ApiError> {
    blocking(move || {
        let faults = match &req.fault {
            Some(flag) => Faults::from_flag(flag)?,
            None => Faults::none(),
        };
        Ok(Json(run_verify(req.suite, faults, req.seed)?))
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(session_info).delete(close_session))
        .route("/sessions/{id}/chunks", post(generate_chunk))
        .route("/sessions/{id}/cache", get(cache).post(repair_cache))
        .route("/bench", post(bench))
        .route("/verify", post(verify))
        .with_state(state)
}

pub fn app() -> Router {
    router(AppState::default())
}

pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, app()).await
}
