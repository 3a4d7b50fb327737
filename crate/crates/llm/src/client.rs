//! Chat-completions client with image attachments.

use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use serial_repro_core::chain::log::JsonlWriter;
use serial_repro_core::grid::{render_image, serialize_grid, Grid};
use thiserror::Error;

use crate::prompts::Task;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid client config: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("exchange log: {0}")]
    Log(#[from] std::io::Error),
}

/// How a board is shown to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// Rendered PNG attached as a data URL.
    #[default]
    Image,
    /// The 0/1 matrix as a second text part.
    MatrixText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmClientConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    /// `None` leaves the server default.
    pub temperature: Option<f64>,
    pub max_retries: u32,
    pub timeout_ms: u64,
    pub cell_px: u32,
    pub input_mode: InputMode,
    /// Global cap shared by every chain using this client.
    pub requests_per_second: Option<f64>,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            token_env: Some("OPENAI_API_KEY".into()),
            temperature: None,
            max_retries: 3,
            timeout_ms: 60_000,
            cell_px: 40,
            input_mode: InputMode::Image,
            requests_per_second: None,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::Config(m.into()));
        if self.endpoint.trim().is_empty() {
            return bad("endpoint is empty");
        }
        if self.model.trim().is_empty() {
            return bad("model is empty");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive");
        }
        if self.cell_px == 0 {
            return bad("cell_px must be positive");
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return bad("temperature must lie in [0, 2]");
            }
        }
        if let Some(r) = self.requests_per_second {
            if !(r > 0.0 && r.is_finite()) {
                return bad("requests_per_second must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Token(String);

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Token(***)")
    }
}

/// Spaces calls at least `1 / rate` seconds apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: &'static str,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn user(parts: Vec<ContentPart>) -> Self {
        ChatMessage {
            role: "user",
            content: parts,
        }
    }

    pub fn assistant(text: &str) -> Self {
        ChatMessage {
            role: "assistant",
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }
}

pub fn png_data_url(png: &[u8]) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    )
}

#[derive(Debug)]
pub struct LlmClient {
    cfg: LlmClientConfig,
    http: reqwest::blocking::Client,
    token: Option<Token>,
    limiter: Option<RateLimiter>,
}

impl LlmClient {
    /// Build a client, reading the token from `cfg.token_env` if set.
    pub fn new(cfg: LlmClientConfig) -> Result<Self, LlmError> {
        let token = match &cfg.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingToken(var.clone()))?),
            None => None,
        };
        Self::with_token(cfg, token)
    }

    pub fn with_token(cfg: LlmClientConfig, token: Option<String>) -> Result<Self, LlmError> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(LlmClient {
            limiter: cfg.requests_per_second.map(RateLimiter::per_second),
            token: token.map(Token),
            http,
            cfg,
        })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.cfg
    }

    /// Parts showing `grid` to the model after `prompt`.
    pub fn grid_parts(&self, prompt: String, grid: &Grid) -> Vec<ContentPart> {
        let shown = match self.cfg.input_mode {
            InputMode::Image => ContentPart::ImageUrl {
                image_url: ImageUrl {
                    url: png_data_url(&render_image(grid, self.cfg.cell_px).png),
                },
            },
            InputMode::MatrixText => ContentPart::Text {
                text: serialize_grid(grid),
            },
        };
        vec![ContentPart::Text { text: prompt }, shown]
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let mut body = json!({ "model": self.cfg.model, "messages": messages });
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    /// One chat-completions call; returns the first choice's text.
    pub fn complete(&self, request_id: &str, messages: &[ChatMessage]) -> Result<String, LlmError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let url = format!(
            "{}/chat/completions",
            self.cfg.endpoint.trim_end_matches('/')
        );
        let mut req = self
            .http
            .post(url)
            .header("x-request-id", request_id)
            .json(&self.request_body(messages));
        if let Some(Token(t)) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    ParseFailure { message: String },
    InvalidDescription { message: String },
    TransportError { message: String },
}

/// One request/response pair, kept for every call including failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request_id: String,
    pub chain_id: String,
    pub step_index: usize,
    pub attempt: u32,
    /// Corrective follow-ups sent before this call within the attempt.
    pub retry: u32,
    pub task: Task,
    pub model: String,
    pub temperature: Option<f64>,
    /// Text of the latest user turn.
    pub prompt: String,
    pub image_attached: bool,
    pub response: Option<String>,
    pub outcome: Outcome,
    pub latency_ms: u64,
}

/// Exchange sink: always kept in memory, optionally appended to JSONL.
#[derive(Debug, Default)]
pub struct ExchangeLog {
    memory: Mutex<Vec<LlmExchange>>,
    file: Option<Mutex<JsonlWriter>>,
}

impl ExchangeLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(ExchangeLog {
            memory: Mutex::default(),
            file: Some(Mutex::new(JsonlWriter::open(path)?)),
        })
    }

    pub fn record(&self, ex: LlmExchange) -> std::io::Result<()> {
        if let Some(f) = &self.file {
            f.lock().expect("exchange log poisoned").append(&ex)?;
        }
        self.memory.lock().expect("exchange log poisoned").push(ex);
        Ok(())
    }

    pub fn entries(&self) -> Vec<LlmExchange> {
        self.memory.lock().expect("exchange log poisoned").clone()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<LlmExchange>, LlmError> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| LlmError::BadResponse(e.to_string())))
            .collect()
    }
}
