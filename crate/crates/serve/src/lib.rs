//! HTTP API over trained generators.
//!
//! `GET /health`, `GET /models` and `POST /generate`. The listener is up
//! while checkpoints load; until loading finishes only `/health` answers
//! normally and the other routes return 503.

mod generate;
mod registry;

pub use generate::{
    assign_seed, plan, render, respond, variant_mask_seed, GenerateRequest, GenerateResponse, Plan, PlacementChoice,
    RequestError, Variant, MAX_ASSIGNED_SEED, MAX_VARIANTS,
};
pub use registry::{
    checkpoint_files, entry_from_bytes, load_dir, ModelEntry, ModelMeta, Registry, RegistryError, CHECKPOINT_EXTENSION,
};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub const PORT_ENV: &str = "DROPNOISE_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Default)]
struct Shared {
    registry: OnceLock<Result<Arc<Registry>, String>>,
    loaded: AtomicUsize,
}

/// Server state: a registry that is set exactly once.
#[derive(Clone, Debug, Default)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// A state whose registry is still loading.
    pub fn loading() -> Self {
        Self::default()
    }

    pub fn ready(registry: Registry) -> Self {
        let s = Self::default();
        s.install(Ok(registry));
        s
    }

    fn install(&self, r: Result<Registry, String>) {
        let _ = self.shared.registry.set(r.map(Arc::new));
    }

    /// Loads `dir` on a blocking thread and installs the result.
    pub async fn load_from(&self, dir: PathBuf) {
        let me = self.clone();
        let result = tokio::task::spawn_blocking(move || load_dir(&dir, &me.shared.loaded).map_err(|e| e.to_string()))
            .await
            .unwrap_or_else(|e| Err(format!("loader panicked: {e}")));
        self.install(result);
    }

    /// Runs `load` on a blocking thread and installs its registry.
    pub async fn load_with(&self, load: impl FnOnce() -> Result<Registry, String> + Send + 'static) {
        let result = tokio::task::spawn_blocking(load).await.unwrap_or_else(|e| Err(format!("loader panicked: {e}")));
        self.install(result);
    }

    fn registry(&self) -> Result<Arc<Registry>, ApiError> {
        match self.shared.registry.get() {
            None => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "models are still loading")),
            Some(Err(e)) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("model loading failed: {e}"))),
            Some(Ok(r)) => Ok(r.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `ok`, `loading` or `error`.
    pub status: String,
    pub models: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let h = match state.shared.registry.get() {
        None => Health { status: "loading".into(), models: state.shared.loaded.load(Ordering::SeqCst) },
        Some(Ok(r)) => Health { status: "ok".into(), models: r.len() },
        Some(Err(_)) => Health { status: "error".into(), models: 0 },
    };
    Json(h)
}

async fn models(State(state): State<AppState>) -> Result<Json<Vec<ModelMeta>>, ApiError> {
    Ok(Json(state.registry()?.metas()))
}

async fn generate_handler(
    State(state): State<AppState>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let registry = state.registry()?;
    let entry = registry
        .get(&req.model)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model `{}`", req.model)))?;
    let generator = entry.generator.clone();
    let plan = plan(&req, assign_seed).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    tokio::task::spawn_blocking(move || respond(&req, &generator, &plan))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/generate", post(generate_handler))
        .with_state(state)
}

/// Port from `flag`, else `DROPNOISE_PORT`, else the default.
pub fn resolve_port(flag: Option<u16>) -> Result<u16, String> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(PORT_ENV) {
        Ok(v) => v.parse().map_err(|_| format!("{PORT_ENV}={v} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

/// Binds `port`, starts loading `dir`, and serves until the task ends.
pub async fn serve(dir: PathBuf, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    let state = AppState::loading();
    let loader = state.clone();
    tokio::spawn(async move { loader.load_from(dir).await });
    axum::serve(listener, router(state)).await
}
