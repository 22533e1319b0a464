//! HTTP service over one read-only checkpoint.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use match3gen::bot::{evaluate_level, BotConfig, DEFAULT_RUNS};
use match3gen::engine::VALID_MOVES;
use match3gen::grid::{MIN_HEIGHT, MIN_WIDTH};
use match3gen::model::Checkpoint;
use match3gen::{ConditionSpec, Error as CoreError, LevelGrid, SymmetryKind};

use crate::commands::{check_size, generate_levels, GeneratedLevel};

/// Upper bound on the per-request `runs` override.
pub const MAX_RUNS: usize = 200;

struct Inner {
    model: OnceLock<Checkpoint>,
    workers: Semaphore,
    bot: BotConfig,
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

impl Service {
    /// A service with no model yet; generation answers 503 until
    /// [`Service::install`] is called.
    pub fn new(workers: usize, bot: BotConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                model: OnceLock::new(),
                workers: Semaphore::new(workers.max(1)),
                bot,
            }),
        }
    }

    pub fn with_model(checkpoint: Checkpoint, workers: usize, bot: BotConfig) -> Self {
        let s = Self::new(workers, bot);
        s.install(checkpoint);
        s
    }

    /// Returns false if a model was already installed.
    pub fn install(&self, checkpoint: Checkpoint) -> bool {
        self.inner.model.set(checkpoint).is_ok()
    }

    pub fn router(&self, static_dir: Option<&Path>) -> Router {
        let api = Router::new()
            .route("/api/health", get(health))
            .route("/api/model-info", get(model_info))
            .route("/api/generate", post(generate))
            .route("/api/validate", post(validate))
            .with_state(self.clone());
        match static_dir {
            Some(dir) => api.fallback_service(ServeDir::new(dir)),
            None => api,
        }
    }
}

type FieldErrors = BTreeMap<&'static str, String>;

fn bad_request(errors: FieldErrors) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "errors": errors }))).into_response()
}

fn loading() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": "model loading" }))).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response()
}

fn parse_object(body: &Bytes) -> Result<Map<String, Value>, FieldErrors> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(FieldErrors::from([("body", "expected a JSON object".into())])),
        Err(e) => Err(FieldErrors::from([("body", format!("invalid JSON: {e}"))])),
    }
}

async fn health(State(s): State<Service>) -> Json<Value> {
    Json(json!({ "status": "ok", "model_loaded": s.inner.model.get().is_some() }))
}

async fn model_info(State(s): State<Service>) -> Response {
    let Some(ck) = s.inner.model.get() else { return loading() };
    let (lo, hi) = ck.difficulty_range();
    Json(json!({
        "variant": ck.variant().as_str(),
        "epoch": ck.epoch,
        "m_min": ck.bounds.m_min,
        "m_max": ck.bounds.m_max,
        "moves_range": if ck.variant().has_difficulty() { json!([lo, hi]) } else { Value::Null },
        "latent_dim": ck.config().latent_dim,
    }))
    .into_response()
}

fn usize_field(obj: &Map<String, Value>, key: &'static str, errors: &mut FieldErrors) -> Option<usize> {
    match obj.get(key) {
        None | Some(Value::Null) => {
            errors.insert(key, "required".into());
            None
        }
        Some(v) => match v.as_u64() {
            Some(n) => Some(n as usize),
            None => {
                errors.insert(key, "must be a non-negative integer".into());
                None
            }
        },
    }
}

async fn generate(State(s): State<Service>, body: Bytes) -> Response {
    let Some(ck) = s.inner.model.get() else { return loading() };
    let obj = match parse_object(&body) {
        Ok(o) => o,
        Err(errors) => return bad_request(errors),
    };
    let mut errors = FieldErrors::new();
    let width = usize_field(&obj, "width", &mut errors);
    let height = usize_field(&obj, "height", &mut errors);
    // range-check each dimension against a valid partner so both are reported
    if let Some(w) = width {
        if let Err(e) = check_size(w, MIN_HEIGHT) {
            errors.insert("width", e.to_string());
        }
    }
    if let Some(h) = height {
        if let Err(e) = check_size(MIN_WIDTH, h) {
            errors.insert("height", e.to_string());
        }
    }
    let size = match (width, height) {
        (Some(w), Some(h)) => check_size(w, h).ok(),
        _ => None,
    };
    let symmetry = match obj.get("symmetry") {
        None | Some(Value::Null) => Some(SymmetryKind::Vertical),
        Some(Value::String(name)) => match name.parse() {
            Ok(kind) => Some(kind),
            Err(_) => {
                errors.insert("symmetry", "must be one of vertical, horizontal, quadrant, unknown".into());
                None
            }
        },
        Some(_) => {
            errors.insert("symmetry", "must be a string".into());
            None
        }
    };
    let moves = match obj.get("moves") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_f64() {
            Some(m) => Some(m),
            None => {
                errors.insert("moves", "must be a number".into());
                None
            }
        },
    };
    let seed = match obj.get("seed") {
        None | Some(Value::Null) => 0,
        Some(v) => v.as_u64().unwrap_or_else(|| {
            errors.insert("seed", "must be a non-negative integer".into());
            0
        }),
    };
    let (Some(size), Some(symmetry), true) = (size, symmetry, errors.is_empty()) else {
        return bad_request(errors);
    };
    let spec = ConditionSpec {
        size,
        symmetry,
        target_moves: moves,
    };
    match generate_levels(ck, &spec, seed, 1) {
        Ok(levels) => {
            let mut record = serde_json::to_value(GeneratedLevel::new(&levels[0], &spec)).expect("record serializes");
            record["seed"] = json!(seed);
            Json(record).into_response()
        }
        Err(e) => match e.downcast_ref::<CoreError>() {
            Some(CoreError::VariantMismatch(msg)) => bad_request(FieldErrors::from([("moves", msg.clone())])),
            Some(e @ CoreError::DifficultyOutOfRange { .. }) => bad_request(FieldErrors::from([("moves", e.to_string())])),
            _ => internal(e),
        },
    }
}

async fn validate(State(s): State<Service>, body: Bytes) -> Response {
    let obj = match parse_object(&body) {
        Ok(o) => o,
        Err(errors) => return bad_request(errors),
    };
    let mut errors = FieldErrors::new();
    let grid = match obj.get("grid") {
        None => {
            errors.insert("grid", "required".into());
            None
        }
        Some(v) => match serde_json::from_value::<Vec<Vec<u8>>>(v.clone()) {
            Ok(rows) => match LevelGrid::from_codes(&rows).and_then(|g| g.validate().map(|_| g)) {
                Ok(g) => Some(g),
                Err(e) => {
                    errors.insert("grid", e.to_string());
                    None
                }
            },
            Err(_) => {
                errors.insert("grid", "must be 11 rows of 9 cell codes (0, 1 or 2)".into());
                None
            }
        },
    };
    let runs = match obj.get("runs") {
        None | Some(Value::Null) => s.inner.bot.run_count,
        Some(v) => match v.as_u64() {
            Some(n) if (1..=MAX_RUNS as u64).contains(&n) => n as usize,
            _ => {
                errors.insert("runs", format!("must be an integer in [1,{MAX_RUNS}]"));
                0
            }
        },
    };
    let (Some(grid), true) = (grid, errors.is_empty()) else {
        return bad_request(errors);
    };
    let config = BotConfig {
        run_count: runs,
        ..s.inner.bot
    };
    let Ok(_permit) = s.inner.workers.acquire().await else {
        return internal("worker pool closed");
    };
    let stats = match tokio::task::spawn_blocking(move || evaluate_level(&grid, &config)).await {
        Ok(stats) => stats,
        Err(e) => return internal(e),
    };
    Json(json!({
        "median_moves": stats.median_moves,
        "std_moves": stats.std_moves,
        "success_rate": stats.success_rate,
        "valid": stats.median_moves <= VALID_MOVES as f64,
        "runs": runs,
        "full_protocol": runs >= DEFAULT_RUNS,
        "move_cap": config.move_cap,
    }))
    .into_response()
}

pub struct ServeOptions {
    pub model: PathBuf,
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
    pub workers: usize,
    pub bot: BotConfig,
}

/// Bind, then load the checkpoint in the background while already
/// answering health checks.
pub async fn serve(opts: ServeOptions) -> anyhow::Result<()> {
    let service = Service::new(opts.workers, opts.bot);
    let app = service.router(opts.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    let loader = service.clone();
    let path = opts.model.clone();
    tokio::task::spawn_blocking(move || match Checkpoint::load(&path) {
        Ok(ck) => {
            eprintln!("loaded {} (epoch {})", path.display(), ck.epoch);
            loader.install(ck);
        }
        Err(e) => {
            eprintln!("failed to load {}: {e}", path.display());
            std::process::exit(1);
        }
    });
    axum::serve(listener, app).await?;
    Ok(())
}
