//! Embeddings from an HTTP embeddings endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use serial_repro_core::analysis::{EmbedError, EmbeddingProvider, DEFAULT_DIMENSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteEmbeddingConfig {
    /// Base URL; requests go to `{endpoint}/embeddings`.
    pub endpoint: String,
    pub model: String,
    pub token_env: Option<String>,
    pub dimension: usize,
    pub batch_size: usize,
    pub timeout_ms: u64,
}

impl Default for RemoteEmbeddingConfig {
    fn default() -> Self {
        RemoteEmbeddingConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-small".into(),
            token_env: Some("OPENAI_API_KEY".into()),
            dimension: DEFAULT_DIMENSION,
            batch_size: 64,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug)]
pub struct RemoteEmbeddingProvider {
    cfg: RemoteEmbeddingConfig,
    http: reqwest::blocking::Client,
    token: Option<String>,
}

impl RemoteEmbeddingProvider {
    pub fn new(cfg: RemoteEmbeddingConfig) -> Result<Self, EmbedError> {
        let token = match &cfg.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                EmbedError::Transport(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        if cfg.batch_size == 0 || cfg.dimension == 0 {
            return Err(EmbedError::Transport(
                "batch_size and dimension must be positive".into(),
            ));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(RemoteEmbeddingProvider { cfg, http, token })
    }

    fn batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let url = format!("{}/embeddings", self.cfg.endpoint.trim_end_matches('/'));
        let mut req = self
            .http
            .post(url)
            .json(&json!({"model": self.cfg.model, "input": texts}));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| EmbedError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedError::Transport(format!("status {status}")));
        }
        let mut rows: Vec<(usize, Vec<f64>)> = body["data"]
            .as_array()
            .ok_or_else(|| EmbedError::Transport("response has no data array".into()))?
            .iter()
            .map(|d| {
                let index = d["index"].as_u64().unwrap_or(0) as usize;
                let values = d["embedding"]
                    .as_array()
                    .map(|xs| xs.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect())
                    .unwrap_or_default();
                (index, values)
            })
            .collect();
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn tag(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }

    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size) {
            out.extend(self.batch(chunk)?);
        }
        Ok(out)
    }
}
