//! Append-only JSON-lines chain log.
//!
//! Each line is one self-describing event with an `"event"` tag. Readers skip
//! events they do not know, so other components can share the file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Annotation, ChainConfig, ChainRecord, ChainStatus, ChainStep, Mode, RecordError};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ChainEvent {
    ChainCreated {
        chain_id: String,
        mode: Mode,
        seed_grid: Grid,
        config: ChainConfig,
    },
    StepCommitted {
        chain_id: String,
        step: ChainStep,
    },
    AnnotationAdded {
        annotation: Annotation,
    },
    ChainTruncated {
        chain_id: String,
        reason: String,
    },
}

pub const CHAIN_EVENT_NAMES: [&str; 4] = [
    "chain_created",
    "step_committed",
    "annotation_added",
    "chain_truncated",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io error: {0}")]
    Io(#[from] io::Error),
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("chain {chain_id}: {source}")]
    Record {
        chain_id: String,
        source: RecordError,
    },
    #[error("unknown chain {0}")]
    UnknownChain(String),
    #[error("chain {0} created twice")]
    DuplicateChain(String),
}

/// Events that rebuild `record` from scratch.
pub fn events_for(record: &ChainRecord) -> Vec<ChainEvent> {
    let mut out = vec![ChainEvent::ChainCreated {
        chain_id: record.chain_id.clone(),
        mode: record.mode,
        seed_grid: record.seed_grid.clone(),
        config: record.config.clone(),
    }];
    out.extend(record.steps.iter().map(|s| ChainEvent::StepCommitted {
        chain_id: record.chain_id.clone(),
        step: s.clone(),
    }));
    if let ChainStatus::Truncated { reason } = &record.status {
        out.push(ChainEvent::ChainTruncated {
            chain_id: record.chain_id.clone(),
            reason: reason.clone(),
        });
    }
    out
}

/// Parse JSON lines, keeping events whose tag is in `known` and skipping the rest.
pub fn parse_lines<T: DeserializeOwned>(text: &str, known: &[&str]) -> Result<Vec<T>, LogError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| LogError::Parse {
            line: i + 1,
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(line).map_err(parse_err)?;
        let tag = value
            .get("event")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        if !known.contains(&tag) {
            continue;
        }
        out.push(serde_json::from_value(value).map_err(parse_err)?);
    }
    Ok(out)
}

pub fn parse_events(text: &str) -> Result<Vec<ChainEvent>, LogError> {
    parse_lines(text, &CHAIN_EVENT_NAMES)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<ChainEvent>, LogError> {
    parse_events(&std::fs::read_to_string(path)?)
}

/// Appends one line per event and flushes after each write.
#[derive(Debug)]
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JsonlWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&mut self, event: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// Chains and annotations rebuilt from events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainStore {
    pub records: BTreeMap<String, ChainRecord>,
    pub annotations: BTreeMap<String, Vec<Annotation>>,
}

impl ChainStore {
    pub fn apply(&mut self, event: &ChainEvent) -> Result<(), LogError> {
        match event {
            ChainEvent::ChainCreated {
                chain_id,
                mode,
                seed_grid,
                config,
            } => {
                if self.records.contains_key(chain_id) {
                    return Err(LogError::DuplicateChain(chain_id.clone()));
                }
                let mut record =
                    ChainRecord::new(chain_id.clone(), *mode, seed_grid.clone(), config.clone());
                if record.target_len() == 0 {
                    record.status = ChainStatus::Complete;
                }
                self.records.insert(chain_id.clone(), record);
            }
            ChainEvent::StepCommitted { chain_id, step } => {
                let record = self.record_mut(chain_id)?;
                record
                    .push(step.clone())
                    .map_err(|source| LogError::Record {
                        chain_id: chain_id.clone(),
                        source,
                    })?;
            }
            ChainEvent::AnnotationAdded { annotation } => {
                self.record_mut(&annotation.chain_id)?;
                self.annotations
                    .entry(annotation.chain_id.clone())
                    .or_default()
                    .push(annotation.clone());
            }
            ChainEvent::ChainTruncated { chain_id, reason } => {
                self.record_mut(chain_id)?.status = ChainStatus::Truncated {
                    reason: reason.clone(),
                };
            }
        }
        Ok(())
    }

    fn record_mut(&mut self, chain_id: &str) -> Result<&mut ChainRecord, LogError> {
        self.records
            .get_mut(chain_id)
            .ok_or_else(|| LogError::UnknownChain(chain_id.to_string()))
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a ChainEvent>) -> Result<Self, LogError> {
        let mut store = ChainStore::default();
        for e in events {
            store.apply(e)?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        Self::replay(&read_events(path)?)
    }
}

/// Write `records` (and their annotations) to a fresh log at `path`.
pub fn write_log<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a ChainRecord>,
    annotations: &[Annotation],
) -> Result<(), LogError> {
    let mut w = JsonlWriter::open(path)?;
    for r in records {
        for e in events_for(r) {
            w.append(&e)?;
        }
    }
    for a in annotations {
        w.append(&ChainEvent::AnnotationAdded {
            annotation: a.clone(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{annotate_posthoc, batch_run, ChainOptions, IdentityBackend};

    #[test]
    fn replay_rebuilds_records() {
        let opts = ChainOptions {
            steps: 3,
            ..ChainOptions::default()
        };
        let batch = batch_run(&IdentityBackend, 4, Mode::Multimodal, 9, &opts);
        let uni = batch_run(&IdentityBackend, 1, Mode::Unimodal, 9, &opts);
        let notes = annotate_posthoc(&uni.records[0], &IdentityBackend, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chains.jsonl");
        write_log(&path, batch.records.iter().chain(&uni.records), &notes).unwrap();
        let store = ChainStore::load(&path).unwrap();
        assert_eq!(store.records.len(), 5);
        for r in batch.records.iter().chain(&uni.records) {
            assert_eq!(&store.records[&r.chain_id], r);
        }
        assert_eq!(store.annotations[&uni.records[0].chain_id], notes);
    }

    #[test]
    fn unknown_events_are_skipped() {
        let text = "{\"event\":\"session_opened\",\"who\":1}\n\n{\"event\":\"chain_truncated\",\"chain_id\":\"a\",\"reason\":\"x\"}\n";
        let events = parse_events(text).unwrap();
        assert_eq!(events.len(), 1);
        assert!(matches!(
            ChainStore::replay(&events),
            Err(LogError::UnknownChain(_))
        ));
    }

    #[test]
    fn malformed_known_event_is_an_error() {
        let err = parse_events("{\"event\":\"step_committed\"}").unwrap_err();
        assert!(matches!(err, LogError::Parse { line: 1, .. }));
    }
}
