//! JSON-over-HTTP API for participants and experimenters.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/api/sessions` | `{participant_id}` | session |
//! | POST | `/api/sessions/{id}/trial` | | assignment |
//! | POST | `/api/sessions/{id}/submit` | `{lease_id, payload, elapsed_ms}` | receipt |
//! | GET | `/api/chains` | | chain summaries |
//! | GET | `/api/chains/{id}` | | chain record |
//! | POST | `/api/admin/batches` | `{mode, n, steps, seed}` | `{chain_ids}` |
//!
//! Errors reply `{"error": code, "message": text}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use serial_repro_core::chain::{
    ChainRecord, ChainStatus, Mode, Payload, PayloadKind, DEFAULT_STEPS,
};
use tower_http::services::ServeDir;

use crate::store::{Assignment, BatchSpec, Receipt, Session, Store, StoreError};

#[derive(Debug, Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub grid_size: usize,
}

pub struct ApiError(StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    fn code(&self) -> (StatusCode, &'static str) {
        use StoreError::*;
        match &self.0 {
            BadParticipant => (StatusCode::BAD_REQUEST, "bad-participant"),
            UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown-session"),
            UnknownChain(_) => (StatusCode::NOT_FOUND, "unknown-chain"),
            UnknownLease(_) => (StatusCode::CONFLICT, "unknown-lease"),
            SessionExhausted(_) => (StatusCode::CONFLICT, "session-exhausted"),
            NoEligibleChain => (StatusCode::CONFLICT, "no-eligible-chain"),
            LeaseExpired => (StatusCode::CONFLICT, "lease-expired"),
            TooFast { .. } => (StatusCode::CONFLICT, "too-fast"),
            DuplicateChain(_) => (StatusCode::CONFLICT, "duplicate-chain"),
            WrongPayloadType { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "wrong-payload-type"),
            BoardSize { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "board-size"),
            Validation {
                lease_retained: true,
                ..
            } => (StatusCode::UNPROCESSABLE_ENTITY, "validation-failure"),
            Validation {
                lease_retained: false,
                ..
            } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "validation-failure-released",
            ),
            Inconsistent(_) | Log(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.code();
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (
            status,
            Json(json!({"error": code, "message": self.0.to_string()})),
        )
            .into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenSession {
    pub participant_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submit {
    pub lease_id: String,
    pub payload: Payload,
    /// Time the participant spent, as measured by the client.
    #[serde(default)]
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchRequest {
    pub mode: Mode,
    pub n: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain_id: String,
    pub mode: Mode,
    pub length: usize,
    pub target: usize,
    pub status: ChainStatus,
    pub next: Option<PayloadKind>,
    pub leased: bool,
}

async fn open_session(
    State(app): State<AppState>,
    Json(req): Json<OpenSession>,
) -> Result<Json<Session>, ApiError> {
    Ok(Json(app.store.open_session(&req.participant_id)?))
}

async fn request_trial(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Assignment>, ApiError> {
    Ok(Json(app.store.request_trial(&id)?))
}

async fn submit_trial(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<Submit>,
) -> Result<Json<Receipt>, ApiError> {
    Ok(Json(app.store.submit_trial(
        &id,
        &req.lease_id,
        req.payload,
        req.elapsed_ms,
    )?))
}

async fn list_chains(State(app): State<AppState>) -> Json<Vec<ChainSummary>> {
    let state = app.store.snapshot();
    let rows = state
        .chains
        .records
        .values()
        .map(|r| ChainSummary {
            chain_id: r.chain_id.clone(),
            mode: r.mode,
            length: r.steps.len(),
            target: r.target_len(),
            status: r.status.clone(),
            next: r.frontier().map(|(_, k)| k),
            leased: state.leases.contains_key(&r.chain_id),
        })
        .collect();
    Json(rows)
}

async fn get_chain(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ChainRecord>, ApiError> {
    app.store
        .chain(&id)
        .map(Json)
        .ok_or(ApiError(StoreError::UnknownChain(id)))
}

async fn launch_batch(
    State(app): State<AppState>,
    Json(req): Json<BatchRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let ids = app.store.launch_batch(BatchSpec {
        mode: req.mode,
        n: req.n,
        steps: req.steps,
        seed: req.seed,
        grid_size: app.grid_size,
    })?;
    Ok(Json(json!({ "chain_ids": ids })))
}

pub fn router(app: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(open_session))
        .route("/api/sessions/{id}/trial", post(request_trial))
        .route("/api/sessions/{id}/submit", post(submit_trial))
        .route("/api/chains", get(list_chains))
        .route("/api/chains/{id}", get(get_chain))
        .route("/api/admin/batches", post(launch_batch))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    axum::serve(listener, router(app, static_dir)).await
}
