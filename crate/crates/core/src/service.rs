//! Read-only HTTP API over one loaded checkpoint and dataset.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::checkpoint::{load_checkpoint, ModelCheckpoint, CHECKPOINT_VERSION};
use crate::context::{ContextGraph, CONTEXT_COUNT};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricReport, DEFAULT_GENS_PER_SAMPLE};
use crate::grid::{load_dataset, DatasetSample, GreenLevel, LEVEL_COUNT};
use crate::neural::Rng;
use crate::pipeline::TrainedModel;

pub const DEFAULT_PORT: u16 = 8080;
pub const MAX_COUNT: usize = 64;
pub const DEFAULT_SAMPLE_LIMIT: usize = 10;
pub const MAX_SAMPLE_LIMIT: usize = 200;

/// Immutable state behind every request once loading finishes.
pub struct Loaded {
    pub model: TrainedModel,
    pub samples: Vec<DatasetSample>,
    /// Indices into `samples` of the held-out test set.
    pub test: Vec<usize>,
    pub metrics: MetricReport,
}

impl Loaded {
    pub fn new(model: TrainedModel, samples: Vec<DatasetSample>) -> Result<Self> {
        let test = model
            .meta
            .test_ids
            .iter()
            .map(|id| {
                samples
                    .iter()
                    .position(|s| s.sample_id == *id)
                    .ok_or_else(|| Error::NotFound(format!("test sample {id} is not in the dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DatasetSample> = test.iter().map(|&i| &samples[i]).collect();
        let metrics = evaluate(&model, &refs, DEFAULT_GENS_PER_SAMPLE, model.meta.seed)?;
        Ok(Loaded {
            model,
            samples,
            test,
            metrics,
        })
    }

    pub fn from_files(model: &Path, data: &Path) -> Result<Self> {
        Loaded::new(load_checkpoint(model)?, load_dataset(data)?)
    }
}

/// Shared handle; empty until the background load completes.
#[derive(Clone, Default)]
pub struct AppState {
    loaded: Arc<OnceLock<Loaded>>,
    entropy: Arc<AtomicU64>,
}

impl AppState {
    pub fn pending() -> Self {
        AppState::default()
    }

    pub fn ready(loaded: Loaded) -> Self {
        let state = AppState::default();
        state.install(loaded);
        state
    }

    pub fn install(&self, loaded: Loaded) {
        let _ = self.loaded.set(loaded);
    }

    fn get(&self) -> std::result::Result<&Loaded, ApiError> {
        self.loaded.get().ok_or_else(|| ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            kind: "loading",
            message: "model is still loading".into(),
            fields: Vec::new(),
        })
    }

    fn fresh_seed(&self) -> u64 {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        nanos ^ self.entropy.fetch_add(0x9e37_79b9_7f4a_7c15, Ordering::Relaxed)
    }
}

#[derive(Debug, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn validation(fields: Vec<FieldError>) -> Self {
        let message = fields
            .iter()
            .map(|f| format!("{}: {}", f.field, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        ApiError {
            status: StatusCode::BAD_REQUEST,
            kind: "validation",
            message,
            fields,
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError::validation(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Parameter(_) | Error::Shape { .. } | Error::RejectedInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            kind: e.kind(),
            message: e.to_string(),
            fields: Vec::new(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.kind, "message": self.message, "fields": self.fields });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

async fn health(State(state): State<AppState>) -> ApiResult<Value> {
    state.get()?;
    Ok(Json(json!({ "status": "ok", "model_version": CHECKPOINT_VERSION })))
}

async fn meta(State(state): State<AppState>) -> ApiResult<Value> {
    let loaded = state.get()?;
    let ck = ModelCheckpoint::from_model(&loaded.model);
    let mut per_level = [0usize; LEVEL_COUNT];
    let mut test_per_level = [0usize; LEVEL_COUNT];
    for s in &loaded.samples {
        per_level[s.green_level.index()] += 1;
    }
    for &i in &loaded.test {
        test_per_level[loaded.samples[i].green_level.index()] += 1;
    }
    Ok(Json(json!({
        "dims": ck.dims,
        "variant": ck.variant,
        "lambda": ck.lambda,
        "levels": (0..LEVEL_COUNT).collect::<Vec<_>>(),
        "categories": ck.dims.m,
        "dataset": {
            "count": loaded.samples.len(),
            "per_level": per_level,
            "test_count": loaded.test.len(),
            "test_per_level": test_per_level,
        },
    })))
}

#[derive(Debug, Deserialize)]
struct SamplesQuery {
    level: Option<String>,
    limit: Option<String>,
}

fn parse_bounded(field: &str, raw: &str, low: usize, high: usize) -> std::result::Result<usize, FieldError> {
    match raw.trim().parse::<usize>() {
        Ok(v) if (low..=high).contains(&v) => Ok(v),
        _ => Err(FieldError {
            field: field.into(),
            message: format!("must be an integer in [{low}, {high}], got '{raw}'"),
        }),
    }
}

async fn samples(
    State(state): State<AppState>,
    query: std::result::Result<Query<SamplesQuery>, QueryRejection>,
) -> ApiResult<Value> {
    let loaded = state.get()?;
    let Query(q) = query.map_err(|e| ApiError::field("query", e.body_text()))?;
    let mut errors = Vec::new();
    let level = match &q.level {
        Some(raw) => parse_bounded("level", raw, 0, LEVEL_COUNT - 1).map_err(|e| errors.push(e)).ok(),
        None => None,
    };
    let limit = match &q.limit {
        Some(raw) => parse_bounded("limit", raw, 1, MAX_SAMPLE_LIMIT).map_err(|e| errors.push(e)).ok(),
        None => Some(DEFAULT_SAMPLE_LIMIT),
    };
    if !errors.is_empty() {
        return Err(ApiError::validation(errors));
    }
    let items: Vec<Value> = loaded
        .test
        .iter()
        .map(|&i| &loaded.samples[i])
        .filter(|s| level.is_none_or(|l| s.green_level.index() == l))
        .take(limit.unwrap_or(DEFAULT_SAMPLE_LIMIT))
        .map(|s| {
            json!({
                "id": s.sample_id,
                "level": s.green_level.index(),
                "config": s.configuration.to_nested(),
                "zones": s.zones.to_nested(),
                "category_totals": s.configuration.category_totals(),
            })
        })
        .collect();
    Ok(Json(json!({ "samples": items })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub configurations: Vec<Vec<Vec<Vec<f64>>>>,
    pub category_totals: Vec<Vec<f64>>,
    pub seed: u64,
    pub latency_ms: f64,
}

struct GenerationRequest {
    level: GreenLevel,
    context: ContextGraph,
    count: usize,
    seed: Option<u64>,
    round: bool,
}

fn parse_generation(body: &Value, loaded: &Loaded) -> std::result::Result<GenerationRequest, ApiError> {
    let obj = body
        .as_object()
        .ok_or_else(|| ApiError::field("body", "expected a JSON object"))?;
    let mut errors = Vec::new();
    let mut fail = |field: &str, message: String| {
        errors.push(FieldError {
            field: field.into(),
            message,
        })
    };

    let level = match obj.get("green_level").map(|v| v.as_u64()) {
        Some(Some(l)) if (l as usize) < LEVEL_COUNT => GreenLevel::new(l as usize).ok(),
        Some(_) => {
            fail("green_level", format!("must be an integer in [0, {}]", LEVEL_COUNT - 1));
            None
        }
        None => {
            fail("green_level", "is required".into());
            None
        }
    };
    let count = match obj.get("count") {
        None => Some(1),
        Some(v) => match v.as_u64() {
            Some(c) if c >= 1 && c as usize <= MAX_COUNT => Some(c as usize),
            _ => {
                fail("count", format!("must be an integer in [1, {MAX_COUNT}]"));
                None
            }
        },
    };
    let seed = match obj.get("seed") {
        None | Some(Value::Null) => Some(None),
        Some(v) => match v.as_u64() {
            Some(s) => Some(Some(s)),
            None => {
                fail("seed", "must be a non-negative integer".into());
                None
            }
        },
    };
    let round = match obj.get("round") {
        None => Some(false),
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => {
            fail("round", "must be a boolean".into());
            None
        }
    };

    let width = loaded.model.context_width();
    let mut not_found = None;
    let context = match obj.get("context") {
        Some(Value::Object(ctx)) => match (ctx.get("sample_id"), ctx.get("features")) {
            (Some(id), None) => match id.as_u64() {
                Some(id) => match loaded.samples.iter().find(|s| s.sample_id == id) {
                    Some(s) => Some(s.context.clone()),
                    None => {
                        not_found = Some(id);
                        None
                    }
                },
                None => {
                    fail("context.sample_id", "must be a non-negative integer".into());
                    None
                }
            },
            (None, Some(features)) => match parse_features(features, width) {
                Ok(graph) => Some(graph),
                Err(message) => {
                    fail("context.features", message);
                    None
                }
            },
            _ => {
                fail("context", "give exactly one of sample_id or features".into());
                None
            }
        },
        _ => {
            fail("context", "is required: {\"sample_id\": k} or {\"features\": [[...]]}".into());
            None
        }
    };

    if !errors.is_empty() {
        return Err(ApiError::validation(errors));
    }
    if let Some(id) = not_found {
        return Err(ApiError {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: format!("unknown sample {id}"),
            fields: vec![FieldError {
                field: "context.sample_id".into(),
                message: format!("no sample with id {id}"),
            }],
        });
    }
    Ok(GenerationRequest {
        level: level.expect("validated"),
        context: context.expect("validated"),
        count: count.expect("validated"),
        seed: seed.expect("validated"),
        round: round.expect("validated"),
    })
}

fn parse_features(v: &Value, width: usize) -> std::result::Result<ContextGraph, String> {
    let rows = v.as_array().ok_or("must be an array of rows")?;
    if rows.len() != CONTEXT_COUNT {
        return Err(format!("must have {CONTEXT_COUNT} rows, got {}", rows.len()));
    }
    let mut flat = Vec::with_capacity(CONTEXT_COUNT * width);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or(format!("row {i} must be an array"))?;
        if row.len() != width {
            return Err(format!("row {i} must have {width} values, got {}", row.len()));
        }
        for x in row {
            flat.push(x.as_f64().filter(|f| f.is_finite()).ok_or(format!("row {i} has a non-numeric value"))?);
        }
    }
    let features = Array2::from_shape_vec((CONTEXT_COUNT, width), flat).map_err(|e| e.to_string())?;
    ContextGraph::from_features(features).map_err(|e| e.to_string())
}

async fn generate(
    State(state): State<AppState>,
    body: std::result::Result<Json<Value>, JsonRejection>,
) -> ApiResult<GenerationResponse> {
    let loaded = state.get()?;
    let Json(body) = body.map_err(|e| ApiError::field("body", e.body_text()))?;
    let req = parse_generation(&body, loaded)?;
    let start = Instant::now();
    let seed = req.seed.unwrap_or_else(|| state.fresh_seed());
    let mut rng = Rng::new(seed);
    let mut configs = loaded.model.generate(&req.context, req.level, req.count, &mut rng)?;
    if req.round {
        configs = configs.iter().map(|c| c.rounded()).collect();
    }
    Ok(Json(GenerationResponse {
        category_totals: configs.iter().map(|c| c.category_totals()).collect(),
        configurations: configs.iter().map(|c| c.to_nested()).collect(),
        seed,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

async fn metrics(State(state): State<AppState>) -> ApiResult<MetricReport> {
    Ok(Json(state.get()?.metrics.clone()))
}

/// API routes, plus the static UI under `/` when `static_dir` is given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/meta", get(meta))
        .route("/api/samples", get(samples))
        .route("/api/generate", post(generate))
        .route("/api/metrics", get(metrics))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds first, then loads model and data in the background; requests see 503 until then.
pub async fn serve(model: PathBuf, data: PathBuf, port: u16, static_dir: Option<PathBuf>) -> Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("0.0.0.0:{port}"), e))?;
    let state = AppState::pending();
    let loader = state.clone();
    let load = tokio::task::spawn_blocking(move || Loaded::from_files(&model, &data).map(|l| loader.install(l)));
    let app = router(state, static_dir);
    let server = std::future::IntoFuture::into_future(axum::serve(listener, app));
    tokio::pin!(server);
    let io_err = |e| Error::io(format!("0.0.0.0:{port}"), e);
    tokio::select! {
        res = &mut server => return res.map_err(io_err),
        loaded = load => loaded.map_err(|e| Error::Contract(format!("loader panicked: {e}")))??,
    }
    eprintln!("model loaded; serving on 0.0.0.0:{port}");
    server.await.map_err(io_err)
}
