//! HTTP service over a shared store.
//!
//! One writer, many readers: mutating endpoints serialize through the write
//! half of an `RwLock`, retrieval scores under the read half and applies its
//! retention reinforcement as a short write afterwards. Snapshot writes flag
//! the store busy; mutating requests received meanwhile get 503 instead of
//! queueing behind the disk.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::time::SystemTime;

use axum::extract::{Query as UrlQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;

use hmem_core::encoder::Embedder;
use hmem_core::ingest::{DialogueTurn, Extractor};
use hmem_core::{snapshot, Error, Feedback, FeedbackKind, MemoryStore, NodeId, Query, StoreError};

use crate::present;

pub struct AppState {
    pub store: RwLock<MemoryStore>,
    pub embedder: Box<dyn Embedder>,
    pub extractor: Box<dyn Extractor>,
    /// Where `POST /save` persists to.
    pub store_dir: Option<PathBuf>,
    snapshotting: AtomicBool,
    turn_counter: AtomicU32,
}

impl AppState {
    pub fn new(
        store: MemoryStore,
        embedder: Box<dyn Embedder>,
        extractor: Box<dyn Extractor>,
        store_dir: Option<PathBuf>,
    ) -> Self {
        Self {
            store: RwLock::new(store),
            embedder,
            extractor,
            store_dir,
            snapshotting: AtomicBool::new(false),
            turn_counter: AtomicU32::new(0),
        }
    }
}

enum ApiError {
    BadRequest(String),
    NotFound(String),
    Busy,
    Upstream(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Busy => (
                StatusCode::SERVICE_UNAVAILABLE,
                "snapshot in progress".to_string(),
            ),
            ApiError::Upstream(m) => (StatusCode::BAD_GATEWAY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Store(StoreError::NotFound(id)) => ApiError::NotFound(format!("{id} not found")),
            Error::Store(_) | Error::Config(_) | Error::Similarity(_) => {
                ApiError::BadRequest(e.to_string())
            }
            _ if e.is_transport() => ApiError::Upstream(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

fn now_epoch() -> i64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn parse_id(raw: &str) -> Result<NodeId, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::BadRequest(format!("invalid episode id `{raw}`")))
}

fn writes_allowed(state: &AppState) -> Result<(), ApiError> {
    if state.snapshotting.load(Ordering::SeqCst) {
        Err(ApiError::Busy)
    } else {
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/stats", get(stats))
        .route("/retrieve", get(retrieve))
        .route("/ingest", post(ingest))
        .route("/feedback", post(feedback))
        .route("/decay", post(decay))
        .route("/compact", post(compact))
        .route("/save", post(save))
        .with_state(state)
}

/// Bind-and-run entry point used by the CLI.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn healthz() -> &'static str {
    "ok"
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let store = state.store.read();
    let counters = store.counters();
    Json(json!({
        "stats": store.stats(),
        "counters": { "sim_ops": counters.sim_ops, "elapsed_us": counters.elapsed.as_micros() as u64 },
    }))
}

#[derive(Deserialize)]
struct RetrieveParams {
    q: Option<String>,
    /// Precomputed query vector as comma-separated floats; alternative to `q`.
    vector: Option<String>,
    k: Option<usize>,
    n: Option<usize>,
    flat: Option<String>,
}

#[derive(Serialize)]
struct RetrieveDto {
    hits: Vec<present::HitRow>,
    sim_ops: u64,
    elapsed_us: u64,
    flat: bool,
}

async fn retrieve(
    State(state): State<Arc<AppState>>,
    UrlQuery(params): UrlQuery<RetrieveParams>,
) -> Result<Json<RetrieveDto>, ApiError> {
    let flat = params
        .flat
        .as_deref()
        .map(|v| matches!(v, "1" | "true" | "yes"))
        .unwrap_or(false);

    let vector = match (&params.q, &params.vector) {
        (_, Some(raw)) => {
            let parsed: Result<Vec<f32>, _> =
                raw.split(',').map(|t| t.trim().parse::<f32>()).collect();
            parsed.map_err(|e| ApiError::BadRequest(format!("invalid vector: {e}")))?
        }
        (Some(q), None) => state
            .embedder
            .embed(q)
            .map_err(|e| ApiError::from(Error::Encoder(e)))?,
        (None, None) => {
            return Err(ApiError::BadRequest(
                "supply `q` (text) or `vector` (comma-separated floats)".to_string(),
            ))
        }
    };
    let query = Query::new(vector)
        .map_err(|e| ApiError::BadRequest(format!("invalid query vector: {e}")))?;

    let (result, rows) = {
        let store = state.store.read();
        let k = params.k.unwrap_or(store.config().k_per_level);
        let n = params.n.unwrap_or(store.config().final_n);
        let result = if flat {
            store.flat_retrieve(&query, n)
        } else {
            store.score_query(&query, k, n)
        }
        .map_err(|e| ApiError::from(Error::Store(e)))?;
        let rows = present::hit_rows(&store, &result);
        (result, rows)
    };
    if !flat {
        // Retention reinforcement is the one write in the retrieval path.
        let ids: Vec<NodeId> = result.hits.iter().map(|h| h.episode).collect();
        state.store.write().reinforce_access(&ids, now_epoch());
    }
    Ok(Json(RetrieveDto {
        hits: rows,
        sim_ops: result.sim_ops,
        elapsed_us: result.elapsed.as_micros() as u64,
        flat,
    }))
}

#[derive(Deserialize)]
struct IngestBody {
    text: String,
    speaker: Option<String>,
    session_id: Option<String>,
    turn_id: Option<u32>,
    timestamp: Option<i64>,
}

async fn ingest(
    State(state): State<Arc<AppState>>,
    Json(body): Json<IngestBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    writes_allowed(&state)?;
    let turn = DialogueTurn {
        session_id: body.session_id.unwrap_or_else(|| "api".to_string()),
        turn_id: body
            .turn_id
            .unwrap_or_else(|| state.turn_counter.fetch_add(1, Ordering::Relaxed)),
        speaker: body.speaker.unwrap_or_else(|| "user".to_string()),
        text: body.text,
        timestamp: body.timestamp.unwrap_or_else(now_epoch),
    };
    let mut store = state.store.write();
    let id = hmem_core::ingest::ingest_turn(
        &mut store,
        state.embedder.as_ref(),
        state.extractor.as_ref(),
        &turn,
    )?;
    Ok(Json(json!({ "episode": id.to_string() })))
}

#[derive(Deserialize)]
struct FeedbackBody {
    episode: String,
    kind: FeedbackKind,
    factor: Option<f64>,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Json(body): Json<FeedbackBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    writes_allowed(&state)?;
    let id = parse_id(&body.episode)?;
    let feedback = Feedback::new(body.kind, body.factor);
    let outcome = state
        .store
        .write()
        .apply_feedback(id, feedback, now_epoch())
        .map_err(|e| ApiError::from(Error::Store(e)))?;
    Ok(Json(json!({
        "episode": body.episode,
        "weight": outcome.weight,
        "multiplier": outcome.multiplier,
        "strength": outcome.strength,
    })))
}

#[derive(Deserialize, Default)]
struct DecayBody {
    now: Option<i64>,
}

async fn decay(
    State(state): State<Arc<AppState>>,
    body: Option<Json<DecayBody>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    writes_allowed(&state)?;
    let now = body.and_then(|b| b.0.now).unwrap_or_else(now_epoch);
    let updated = state.store.write().decay(now);
    Ok(Json(json!({ "updated": updated, "now": now })))
}

async fn compact(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    writes_allowed(&state)?;
    let pruned = state.store.write().compact();
    Ok(Json(json!({ "pruned": pruned })))
}

async fn save(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let dir = state
        .store_dir
        .clone()
        .ok_or_else(|| ApiError::BadRequest("service has no store directory".to_string()))?;
    if state.snapshotting.swap(true, Ordering::SeqCst) {
        return Err(ApiError::Busy);
    }
    // Hold the read half: concurrent reads continue, writes wait it out
    // (new write requests are turned away by the busy flag).
    let result = {
        let store = state.store.read();
        snapshot::save(&store, &dir)
    };
    state.snapshotting.store(false, Ordering::SeqCst);
    let summary = result.map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({
        "path": summary.path,
        "live_per_layer": summary.live_per_layer,
        "remapped": summary.remapped,
    })))
}
