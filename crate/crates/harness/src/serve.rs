//! HTTP front end over a [`SharedIndex`].
//!
//! Additions queue on a fair async mutex, so they run one at a time in
//! arrival order. Searches read the last published state and never wait
//! for an addition in progress.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use incindex_core::{store, top_k, Error, Hyperparams, IndexState, OptimizerConfig, SharedIndex};

pub struct Service {
    index: SharedIndex,
    hp: Hyperparams,
    optimizer: OptimizerConfig,
    seed: u64,
    add_queue: tokio::sync::Mutex<()>,
}

impl Service {
    pub fn new(state: IndexState, hp: Hyperparams, optimizer: OptimizerConfig, seed: u64) -> Self {
        Self {
            index: SharedIndex::new(state),
            hp,
            optimizer,
            seed,
            add_queue: tokio::sync::Mutex::new(()),
        }
    }

    pub fn index(&self) -> &SharedIndex {
        &self.index
    }
}

#[derive(Deserialize)]
struct AddRequest {
    doc_id: String,
    query_embeddings: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct AddResponse {
    feasible: bool,
    iterations: usize,
    restarts: u32,
    wall_millis: f64,
}

#[derive(Deserialize)]
struct SearchRequest {
    embedding: Vec<f32>,
    k: usize,
}

#[derive(Serialize)]
struct SearchHit {
    doc_id: String,
    score: f64,
}

#[derive(Deserialize)]
struct SnapshotRequest {
    path: PathBuf,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::DuplicateId(_) => StatusCode::CONFLICT,
            Error::DimensionMismatch { .. } | Error::KOutOfRange { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Empty(_) | Error::NonFinite(_) | Error::InvalidArgument(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn add_document(State(svc): State<Arc<Service>>, body: Bytes) -> Result<Json<AddResponse>, ApiError> {
    let req: AddRequest = parse(&body)?;
    let _turn = svc.add_queue.lock().await;
    let worker = Arc::clone(&svc);
    let report = blocking(move || {
        worker
            .index
            .add_document(&req.doc_id, &req.query_embeddings, &worker.hp, &worker.optimizer, worker.seed)
    })
    .await?;
    Ok(Json(AddResponse {
        feasible: report.feasible,
        iterations: report.iterations,
        restarts: report.restarts,
        wall_millis: report.wall_millis,
    }))
}

async fn search(State(svc): State<Arc<Service>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SearchRequest = parse(&body)?;
    let state = svc.index.load();
    let ranked = blocking(move || top_k(&state, &req.embedding, req.k)).await?;
    let results: Vec<SearchHit> = ranked
        .entries
        .into_iter()
        .map(|h| SearchHit {
            doc_id: h.doc.id.to_string(),
            score: h.score,
        })
        .collect();
    Ok(Json(json!({ "results": results })).into_response())
}

async fn stats(State(svc): State<Arc<Service>>) -> Response {
    let s = svc.index.load();
    Json(json!({ "num_docs": s.len(), "n0": s.n0(), "dim": s.dim() })).into_response()
}

async fn snapshot(State(svc): State<Arc<Service>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SnapshotRequest = parse(&body)?;
    let state = svc.index.load();
    let hp = svc.hp;
    blocking(move || store::save_snapshot(&state, &hp, &req.path)).await?;
    Ok(Json(json!({ "ok": true })).into_response())
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/documents", post(add_document))
        .route("/v1/search", post(search))
        .route("/v1/stats", get(stats))
        .route("/v1/snapshot", post(snapshot))
        .with_state(svc)
}

/// Serves until the listener fails.
pub async fn serve(svc: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
