//! Deterministic stand-in for a chat-completions and embeddings server.
//!
//! Replies are a pure function of the request body and the stub seed, so a
//! batch run against the stub is reproducible. Scripted replies, if queued,
//! are served first in order.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine as _;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use serial_repro_core::analysis::OfflineFeaturizer;
use serial_repro_core::grid::{grid_from_png, parse_grid, sample_grid, serialize_grid, Grid};
use serial_repro_core::seed::{hash_str, rng_for};
use tokio::sync::oneshot;

use crate::prompts::{describe_prompt, render_prompt, reproduce_prompt};

#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    Text(String),
    Status(u16),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubConfig {
    /// Per-tile flip probability applied to every board the stub outputs.
    pub flip_rate: f64,
    pub seed: u64,
    pub embedding_dimension: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            flip_rate: 0.02,
            seed: 0,
            embedding_dimension: serial_repro_core::analysis::DEFAULT_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordedRequest {
    pub path: String,
    pub request_id: Option<String>,
    /// Whether a bearer token was sent. The token itself is not kept.
    pub authorized: bool,
    pub body: Value,
}

#[derive(Debug, Default)]
struct Inner {
    config: StubConfig,
    script: Mutex<VecDeque<StubReply>>,
    requests: Mutex<Vec<RecordedRequest>>,
    served: AtomicU64,
}

#[derive(Debug, Clone, Default)]
pub struct StubState(Arc<Inner>);

impl StubState {
    pub fn new(config: StubConfig) -> Self {
        StubState(Arc::new(Inner {
            config,
            ..Inner::default()
        }))
    }

    pub fn push(&self, reply: StubReply) {
        self.0
            .script
            .lock()
            .expect("stub poisoned")
            .push_back(reply);
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.0.requests.lock().expect("stub poisoned").clone()
    }

    fn record(&self, path: &str, headers: &HeaderMap, body: &Value) {
        let request_id = headers
            .get("x-request-id")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let authorized = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("Bearer "));
        self.0
            .requests
            .lock()
            .expect("stub poisoned")
            .push(RecordedRequest {
                path: path.into(),
                request_id,
                authorized,
                body: body.clone(),
            });
    }
}

fn prefix(template: String) -> String {
    // Everything before the first size digit.
    let cut = template
        .find(|c: char| c.is_ascii_digit())
        .unwrap_or(template.len());
    template[..cut].to_string()
}

fn size_after(prompt: &str, pre: &str) -> Option<usize> {
    let rest = prompt.strip_prefix(pre)?;
    rest.split('x').next()?.parse().ok()
}

fn text_part(part: &Value) -> Option<&str> {
    (part["type"] == "text")
        .then(|| part["text"].as_str())
        .flatten()
}

fn shown_grid(part: &Value, size: usize) -> Result<Grid, String> {
    if let Some(text) = text_part(part) {
        return parse_grid(text).map_err(|e| e.to_string());
    }
    let url = part["image_url"]["url"]
        .as_str()
        .ok_or("no image attached")?;
    let (_, data) = url
        .split_once("base64,")
        .ok_or("image is not a base64 data URL")?;
    let png = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| e.to_string())?;
    grid_from_png(&png, size).map_err(|e| e.to_string())
}

fn noisy<R: Rng>(g: &Grid, rate: f64, rng: &mut R) -> Grid {
    Grid::from_fn(g.size(), |r, c| g.get(r, c) ^ rng.random_bool(rate))
}

const DESCRIPTION_PREFIX: &str = "board with rows";

fn matrix_reply<R: Rng>(g: &Grid, rng: &mut R) -> String {
    let spaced: String = serialize_grid(g)
        .lines()
        .map(|row| row.chars().map(String::from).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n");
    match rng.random_range(0..3) {
        0 => spaced,
        1 => format!("```\n{spaced}\n```"),
        _ => format!("Here is the matrix:\n\n{spaced}"),
    }
}

/// Deterministic reply to a chat request.
pub fn stub_reply(config: &StubConfig, body: &Value) -> String {
    const REFUSAL: &str = "I can only help with grid tasks.";
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let Some(first) = messages.first() else {
        return REFUSAL.into();
    };
    let parts = first["content"].as_array().cloned().unwrap_or_default();
    let Some(prompt) = parts.first().and_then(text_part) else {
        return REFUSAL.into();
    };
    let turn = messages.iter().filter(|m| m["role"] == "user").count() as u64;
    let mut rng = rng_for(config.seed, &[hash_str(&first.to_string()), turn]);

    let (rep, desc, rend) = (
        prefix(reproduce_prompt(7)),
        prefix(describe_prompt(7)),
        prefix(render_prompt(7, "")),
    );
    if let Some(size) = size_after(prompt, &rep) {
        match parts.get(1).map(|p| shown_grid(p, size)) {
            Some(Ok(g)) => matrix_reply(&noisy(&g, config.flip_rate, &mut rng), &mut rng),
            _ => "I could not read the image.".into(),
        }
    } else if let Some(size) = size_after(prompt, &desc) {
        match parts.get(1).map(|p| shown_grid(p, size)) {
            Some(Ok(g)) => {
                let rows =
                    serialize_grid(&noisy(&g, config.flip_rate, &mut rng)).replace('\n', " ");
                format!("{DESCRIPTION_PREFIX} {rows}")
            }
            _ => "I could not read the image.".into(),
        }
    } else if let Some(size) = size_after(prompt, &rend) {
        let description = prompt
            .rsplit_once("Here is the description: ")
            .map(|(_, d)| d)
            .unwrap_or("");
        let decoded = description
            .strip_prefix(DESCRIPTION_PREFIX)
            .and_then(|rows| {
                parse_grid(&rows.split_whitespace().collect::<Vec<_>>().join("\n")).ok()
            })
            .filter(|g| g.size() == size);
        let g = decoded.unwrap_or_else(|| sample_grid(&mut rng, size, 0.5));
        matrix_reply(&noisy(&g, config.flip_rate, &mut rng), &mut rng)
    } else {
        REFUSAL.into()
    }
}

async fn chat(
    State(state): State<StubState>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    state.record("/v1/chat/completions", &headers, &body);
    let scripted = state.0.script.lock().expect("stub poisoned").pop_front();
    let text = match scripted {
        Some(StubReply::Status(code)) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            return (
                status,
                Json(json!({"error": {"message": "scripted failure"}})),
            )
                .into_response();
        }
        Some(StubReply::Text(t)) => t,
        None => stub_reply(&state.0.config, &body),
    };
    let n = state.0.served.fetch_add(1, Ordering::SeqCst);
    Json(json!({
        "id": format!("chatcmpl-stub-{n}"),
        "object": "chat.completion",
        "model": body["model"],
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }))
    .into_response()
}

async fn embeddings(
    State(state): State<StubState>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    state.record("/v1/embeddings", &headers, &body);
    let inputs: Vec<String> = match &body["input"] {
        Value::String(s) => vec![s.clone()],
        Value::Array(xs) => xs
            .iter()
            .filter_map(|x| x.as_str().map(str::to_string))
            .collect(),
        _ => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({"error": {"message": "input must be text"}})),
            )
                .into_response()
        }
    };
    let f = OfflineFeaturizer {
        dimension: state.0.config.embedding_dimension,
        seed: state.0.config.seed,
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"object": "embedding", "index": i, "embedding": f.embed(t)}))
        .collect();
    Json(json!({"object": "list", "data": data, "model": body["model"]})).into_response()
}

pub fn router(state: StubState) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: StubState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// A stub running on its own thread and runtime, stopped on drop.
#[derive(Debug)]
pub struct StubServer {
    addr: SocketAddr,
    state: StubState,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(config: StubConfig) -> std::io::Result<Self> {
        let state = StubState::new(config);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(StubServer {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Base URL for [`crate::LlmClientConfig::endpoint`].
    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn state(&self) -> &StubState {
        &self.state
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
