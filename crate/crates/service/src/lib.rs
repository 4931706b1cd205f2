//! Local HTTP service in front of the terrain generator.
//!
//! `POST /api/generate` enqueues a job, `GET /api/generate/{id}` polls it and
//! `GET /api/health` reports whether models are loaded. Jobs run on a fixed
//! pool of workers fed by a bounded FIFO queue.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tower_http::cors::{AllowOrigin, CorsLayer};
use uuid::Uuid;

use terrain_diffusion::checkpoint::sha256_hex;
use terrain_diffusion::config::{ArtifactPaths, ServiceConfig};
use terrain_diffusion::control::{ConditionKind, ConditionRaster, ControlAdapter};
use terrain_diffusion::pipeline::{Generator, JointModel};
use terrain_diffusion::raster::io::{heightmap_to_png16, texture_from_png, texture_to_png};
use terrain_diffusion::seeding::substream;

pub const DEFAULT_STEPS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobResult {
    pub width: usize,
    pub height: usize,
    pub heightmap_png16_base64: String,
    pub texture_png_base64: String,
}

/// Status body of `GET /api/generate/{id}`. `result` is present exactly
/// when `state` is `done`, `error` exactly when it is `failed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: Uuid,
    pub state: JobState,
    pub steps: usize,
    pub seed: u64,
    pub conditioned: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub result: Option<JobResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub sketch_png_base64: Option<String>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accepted {
    pub job_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub model_loaded: bool,
    pub adapter_loaded: bool,
    /// SHA-256 of the joint denoiser checkpoint file.
    pub checkpoint_hash: Option<String>,
    pub adapter_hash: Option<String>,
    pub resolution_px: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

enum Phase {
    Queued,
    Running,
    Done(JobResult),
    Failed(String),
}

struct Job {
    phase: Phase,
    steps: usize,
    seed: u64,
    sketch: Option<ConditionRaster>,
}

impl Job {
    fn status(&self, id: Uuid) -> JobStatus {
        let (state, result, error) = match &self.phase {
            Phase::Queued => (JobState::Queued, None, None),
            Phase::Running => (JobState::Running, None, None),
            Phase::Done(r) => (JobState::Done, Some(r.clone()), None),
            Phase::Failed(e) => (JobState::Failed, None, Some(e.clone())),
        };
        JobStatus {
            job_id: id,
            state,
            steps: self.steps,
            seed: self.seed,
            conditioned: self.sketch.is_some(),
            result,
            error,
        }
    }
}

/// Models found at startup, with the hashes reported by `/api/health`.
#[derive(Debug, Clone, Default)]
pub struct LoadedModels {
    pub generator: Option<Arc<Generator>>,
    pub checkpoint_hash: Option<String>,
    pub adapter_hash: Option<String>,
}

impl LoadedModels {
    /// Loads whatever is present; a missing or unreadable base model leaves
    /// the service up with `model_loaded = false`.
    pub fn load(paths: &ArtifactPaths, resolution_px: usize, resolution_m: f64) -> Self {
        let model = match JointModel::load(&paths.heightmap_vae(), &paths.texture_vae(), &paths.ldm(), resolution_px, resolution_m) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("generation disabled: {e}");
                return Self::default();
            }
        };
        let adapter = match ControlAdapter::load(&paths.adapter()) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("sketch conditioning disabled: {e}");
                None
            }
        };
        Self {
            checkpoint_hash: file_hash(&paths.ldm()),
            adapter_hash: adapter.as_ref().and_then(|_| file_hash(&paths.adapter())),
            generator: Some(Arc::new(Generator { model, adapter })),
        }
    }
}

fn file_hash(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| sha256_hex(&b))
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    jobs: Mutex<HashMap<Uuid, Job>>,
    queue: mpsc::Sender<Uuid>,
    receiver: Mutex<Option<mpsc::Receiver<Uuid>>>,
    models: LoadedModels,
    resolution_px: usize,
}

impl AppState {
    /// State with an empty queue of `queue_depth`; call
    /// [`AppState::spawn_workers`] to start processing.
    pub fn new(models: LoadedModels, resolution_px: usize, queue_depth: usize) -> Self {
        let (tx, rx) = mpsc::channel(queue_depth.max(1));
        Self {
            inner: Arc::new(Shared {
                jobs: Mutex::new(HashMap::new()),
                queue: tx,
                receiver: Mutex::new(Some(rx)),
                models,
                resolution_px,
            }),
        }
    }

    /// Starts `workers` tasks draining the queue. Only the first call has
    /// an effect.
    pub fn spawn_workers(&self, workers: usize) {
        let Some(rx) = self.inner.receiver.lock().expect("receiver lock").take() else {
            return;
        };
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..workers.max(1) {
            let rx = rx.clone();
            let state = self.clone();
            tokio::spawn(async move {
                loop {
                    let next = rx.lock().await.recv().await;
                    let Some(id) = next else { break };
                    let worker_state = state.clone();
                    if let Err(e) = tokio::task::spawn_blocking(move || worker_state.run_job(id)).await {
                        state.finish(id, Phase::Failed(format!("worker panicked: {e}")));
                    }
                }
            });
        }
    }

    fn finish(&self, id: Uuid, phase: Phase) {
        if let Some(job) = self.inner.jobs.lock().expect("job lock").get_mut(&id) {
            job.phase = phase;
        }
    }

    fn run_job(&self, id: Uuid) {
        let (steps, seed, sketch) = {
            let mut jobs = self.inner.jobs.lock().expect("job lock");
            let Some(job) = jobs.get_mut(&id) else { return };
            job.phase = Phase::Running;
            (job.steps, job.seed, job.sketch.clone())
        };
        let phase = match self.generate(steps, seed, sketch.as_ref()) {
            Ok(r) => Phase::Done(r),
            Err(e) => Phase::Failed(e),
        };
        self.finish(id, phase);
    }

    fn generate(&self, steps: usize, seed: u64, sketch: Option<&ConditionRaster>) -> Result<JobResult, String> {
        let generator = self.inner.models.generator.as_ref().ok_or("model not loaded")?;
        let mut rng = substream(seed, "service/generate");
        let (hm, tx) = generator.generate(sketch, steps, &mut rng).map_err(|e| e.to_string())?;
        Ok(JobResult {
            width: hm.width(),
            height: hm.height(),
            heightmap_png16_base64: B64.encode(heightmap_to_png16(&hm).map_err(|e| e.to_string())?),
            texture_png_base64: B64.encode(texture_to_png(&tx).map_err(|e| e.to_string())?),
        })
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let m = &state.inner.models;
    Json(Health {
        model_loaded: m.generator.is_some(),
        adapter_loaded: m.generator.as_ref().is_some_and(|g| g.adapter.is_some()),
        checkpoint_hash: m.checkpoint_hash.clone(),
        adapter_hash: m.adapter_hash.clone(),
        resolution_px: state.inner.resolution_px,
    })
}

fn parse_request(state: &AppState, body: &[u8]) -> Result<Job, Response> {
    let req: GenerateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        GenerateRequest::default()
    } else {
        serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")))?
    };
    let Some(generator) = state.inner.models.generator.as_ref() else {
        return Err(error(StatusCode::SERVICE_UNAVAILABLE, "model not loaded"));
    };
    let steps = req.steps.unwrap_or(DEFAULT_STEPS);
    let max = generator.model.ldm.schedule.timesteps();
    if steps == 0 || steps > max {
        return Err(error(StatusCode::BAD_REQUEST, format!("steps must lie in 1..={max}")));
    }
    let sketch = match req.sketch_png_base64 {
        None => None,
        Some(b64) => {
            let bytes = B64
                .decode(b64.trim())
                .map_err(|e| error(StatusCode::BAD_REQUEST, format!("sketch is not valid base64: {e}")))?;
            let tex = texture_from_png(&bytes).map_err(|e| error(StatusCode::BAD_REQUEST, format!("sketch is not an RGB PNG: {e}")))?;
            let px = state.inner.resolution_px;
            if tex.width() != px || tex.height() != px {
                return Err(error(
                    StatusCode::BAD_REQUEST,
                    format!("sketch is {}x{}, expected {px}x{px}", tex.width(), tex.height()),
                ));
            }
            let raster = ConditionRaster::new(tex, ConditionKind::Sketch).map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))?;
            if generator.adapter.is_none() {
                return Err(error(StatusCode::SERVICE_UNAVAILABLE, "no sketch adapter loaded"));
            }
            Some(raster)
        }
    };
    Ok(Job {
        phase: Phase::Queued,
        steps,
        seed: req.seed.unwrap_or_else(rand::random),
        sketch,
    })
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Response {
    let job = match parse_request(&state, &body) {
        Ok(j) => j,
        Err(r) => return r,
    };
    let id = Uuid::new_v4();
    state.inner.jobs.lock().expect("job lock").insert(id, job);
    match state.inner.queue.try_send(id) {
        Ok(()) => (StatusCode::ACCEPTED, Json(Accepted { job_id: id })).into_response(),
        Err(e) => {
            state.inner.jobs.lock().expect("job lock").remove(&id);
            let msg = match e {
                mpsc::error::TrySendError::Full(_) => "queue full",
                mpsc::error::TrySendError::Closed(_) => "workers stopped",
            };
            error(StatusCode::SERVICE_UNAVAILABLE, msg)
        }
    }
}

async fn status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Ok(id) = Uuid::parse_str(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown job id");
    };
    let jobs = state.inner.jobs.lock().expect("job lock");
    match jobs.get(&id) {
        Some(job) => Json(job.status(id)).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown job id"),
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE])
}

pub fn router(state: AppState, allowed_origins: &[String]) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/generate", post(submit))
        .route("/api/generate/{id}", get(status))
        .layer(cors(allowed_origins))
        .with_state(state)
}

/// Binds, starts workers and serves until the process is stopped.
pub async fn serve(config: &ServiceConfig, models: LoadedModels, resolution_px: usize) -> Result<(), ServiceError> {
    let state = AppState::new(models, resolution_px, config.queue_depth);
    state.spawn_workers(config.workers);
    let app = router(state, &config.allowed_origins);
    let listener = tokio::net::TcpListener::bind(&config.bind).await.map_err(|source| ServiceError::Bind {
        addr: config.bind.clone(),
        source,
    })?;
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    log::info!("listening on {}", addr.map_or(config.bind.clone(), |a| a.to_string()));
    axum::serve(listener, app).await?;
    Ok(())
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
