//! Service configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serial_repro_llm::{LlmClientConfig, RemoteEmbeddingConfig};

use crate::store::{Policy, DISPLAY_MS, LEASE_MS, MAX_TRIALS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub log_path: PathBuf,
    /// Built web-ui assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub lease_ms: u64,
    pub max_trials: usize,
    pub display_ms: u64,
    pub grid_size: usize,
    /// Seeds chain assignment.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            log_path: PathBuf::from("events.jsonl"),
            static_dir: None,
            lease_ms: LEASE_MS,
            max_trials: MAX_TRIALS,
            display_ms: DISPLAY_MS,
            grid_size: serial_repro_core::grid::DEFAULT_SIZE,
            seed: 0,
        }
    }
}

impl ServiceConfig {
    pub fn policy(&self) -> Policy {
        Policy {
            max_trials: self.max_trials,
            display_ms: self.display_ms,
            lease_ms: self.lease_ms,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub service: ServiceConfig,
    pub llm: LlmClientConfig,
    pub embedding: RemoteEmbeddingConfig,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.llm.validate()?;
        if cfg.service.max_trials == 0 || cfg.service.grid_size < 2 {
            anyhow::bail!("service.max_trials must be positive and service.grid_size at least 2");
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        let cfg = Config::parse(
            "[service]\nlease_ms = 1000\n[llm]\nmodel = \"m\"\nendpoint = \"http://x/v1\"\n",
        )
        .unwrap();
        assert_eq!(cfg.service.lease_ms, 1000);
        assert_eq!(cfg.llm.model, "m");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("[service]\nleese_ms = 1\n").is_err());
        assert!(Config::parse("[service]\nmax_trials = 0\n").is_err());
        assert!(Config::parse("[llm]\ntemperature = -1.0\n").is_err());
    }
}
