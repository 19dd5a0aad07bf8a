//! HTTP/JSON front of the simulator.
//!
//! | method | path           | body             | reply            |
//! |--------|----------------|------------------|------------------|
//! | GET    | `/health`      |                  | `{"status":"ok"}`|
//! | GET    | `/v1/presets`  |                  | `PresetsResponse`|
//! | POST   | `/v1/run`      | `RunRequest`     | `JobResponse`    |
//! | POST   | `/v1/analyze`  | `AnalyzeRequest` | `JobResponse`    |
//!
//! Failures reply with an `ErrorBody`: 400 for invalid configurations, 422 when
//! a numerical guard trips, 500 otherwise.

pub mod render;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use collapse_core::error::SimError;
use collapse_core::jobs::{execute_analysis, execute_run};
use collapse_core::presets;
use collapse_core::wire::{
    AnalyzeRequest, ErrorBody, ErrorKind, JobResponse, OutputFile, PresetEntry, PresetsResponse, RunRequest,
};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub const THREADS_ENV: &str = "COLLAPSE_SIM_THREADS";

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Worker threads for trajectory ensembles; all cores when unset.
    pub threads: Option<usize>,
}

impl ServiceConfig {
    pub fn from_env() -> Self {
        Self {
            threads: std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
                .filter(|&n: &usize| n > 0),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pool: Arc<rayon::ThreadPool>,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> std::io::Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new().thread_name(|i| format!("collapse-worker-{i}"));
        if let Some(n) = config.threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(std::io::Error::other)?;
        Ok(Self { pool: Arc::new(pool) })
    }
}

pub struct ApiError(pub ErrorBody);

impl ApiError {
    fn invalid(message: impl Into<String>) -> Self {
        ApiError(ErrorBody {
            kind: ErrorKind::InvalidConfig,
            message: message.into(),
            guard: None,
            step: None,
        })
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError(ErrorBody {
            kind: ErrorKind::Internal,
            message: message.into(),
            guard: None,
            step: None,
        })
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        ApiError(ErrorBody::from(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::InvalidConfig => StatusCode::BAD_REQUEST,
            ErrorKind::NumericalGuard => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("invalid request: {e}")))
}

async fn blocking<F>(state: &AppState, job: F) -> Result<Vec<OutputFile>, ApiError>
where
    F: FnOnce() -> Result<Vec<OutputFile>, SimError> + Send + 'static,
{
    let pool = state.pool.clone();
    tokio::task::spawn_blocking(move || pool.install(job))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

pub fn presets_response() -> PresetsResponse {
    PresetsResponse {
        presets: presets::all()
            .into_iter()
            .map(|p| {
                let lattice = presets::to_lattice(&p, p.sigma_m, presets::NUCLEON_MASS);
                PresetEntry { preset: p, lattice }
            })
            .collect(),
        formulas: presets::MAPPING_FORMULAS.iter().map(|s| s.to_string()).collect(),
    }
}

async fn get_presets() -> Json<PresetsResponse> {
    Json(presets_response())
}

async fn run(State(state): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: RunRequest = parse(&body)?;
    req.config.validate()?;
    tracing::info!(seed = ?req.seed, steps = req.config.integration.steps, "run");
    let files = blocking(&state, move || {
        let start = Instant::now();
        let out = execute_run(&req.config, req.seed)?;
        Ok(render::run_files(&out, start.elapsed().as_secs_f64()))
    })
    .await?;
    Ok(Json(JobResponse { files }))
}

async fn analyze(State(state): State<AppState>, body: Bytes) -> Result<Json<JobResponse>, ApiError> {
    let req: AnalyzeRequest = parse(&body)?;
    req.config.validate()?;
    tracing::info!(kind = req.kind.name(), "analyze");
    let files = blocking(&state, move || {
        let out = execute_analysis(&req.config, req.kind, req.seed)?;
        let mut config = req.config.clone();
        if let Some(s) = req.seed {
            config.integration.seed = s;
        }
        Ok(render::analysis_files(&out, &config))
    })
    .await?;
    Ok(Json(JobResponse { files }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/presets", get(get_presets))
        .route("/v1/run", post(run))
        .route("/v1/analyze", post(analyze))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves in the background.
pub async fn spawn(
    addr: SocketAddr,
    config: &ServiceConfig,
) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let state = AppState::new(config)?;
    Ok((local, tokio::spawn(serve(listener, state))))
}
