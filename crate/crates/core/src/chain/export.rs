//! Directory export of chains for analysis.
//!
//! Layout: one directory per chain holding `meta.json`, `board-00.txt` (the
//! seed), `step-NN.grid.txt` / `step-NN.desc.txt` per step and
//! `note-NN.txt` per post-hoc annotation. Payload files are authoritative;
//! `meta.json` carries everything else.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Annotation, ChainConfig, ChainRecord, ChainStatus, ChainStep, Description, Mode, Payload,
    PayloadKind, Producer,
};
use crate::grid::{parse_grid, GridError};

const META: &str = "meta.json";
const SEED_FILE: &str = "board-00.txt";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Meta { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Grid { path: PathBuf, source: GridError },
}

#[derive(Debug, Serialize, Deserialize)]
struct StepMeta {
    index: usize,
    kind: PayloadKind,
    file: String,
    producer: Producer,
    timestamp_ms: u64,
    elapsed_ms: u64,
    #[serde(default)]
    attempts: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct NoteMeta {
    step_index: usize,
    file: String,
    producer: Producer,
    timestamp_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainMeta {
    chain_id: String,
    mode: Mode,
    config: ChainConfig,
    status: ChainStatus,
    seed_file: String,
    steps: Vec<StepMeta>,
    #[serde(default)]
    annotations: Vec<NoteMeta>,
}

fn write(path: PathBuf, text: &str) -> Result<(), ExportError> {
    fs::write(&path, text).map_err(|source| ExportError::Io { path, source })
}

fn read(path: PathBuf) -> Result<String, ExportError> {
    fs::read_to_string(&path).map_err(|source| ExportError::Io { path, source })
}

fn read_grid(path: PathBuf) -> Result<crate::grid::Grid, ExportError> {
    let text = read(path.clone())?;
    parse_grid(&text).map_err(|source| ExportError::Grid { path, source })
}

pub fn export_chains(
    dir: impl AsRef<Path>,
    records: &[ChainRecord],
    annotations: &BTreeMap<String, Vec<Annotation>>,
) -> Result<(), ExportError> {
    let dir = dir.as_ref();
    for r in records {
        let chain_dir = dir.join(&r.chain_id);
        fs::create_dir_all(&chain_dir).map_err(|source| ExportError::Io {
            path: chain_dir.clone(),
            source,
        })?;
        write(chain_dir.join(SEED_FILE), &(r.seed_grid.to_text() + "\n"))?;
        let mut steps = Vec::with_capacity(r.steps.len());
        for s in &r.steps {
            let (file, text) = match &s.payload {
                Payload::Grid(g) => (format!("step-{:02}.grid.txt", s.index), g.to_text() + "\n"),
                Payload::Description(d) => (format!("step-{:02}.desc.txt", s.index), d.clone()),
            };
            write(chain_dir.join(&file), &text)?;
            steps.push(StepMeta {
                index: s.index,
                kind: s.payload.kind(),
                file,
                producer: s.producer.clone(),
                timestamp_ms: s.timestamp_ms,
                elapsed_ms: s.elapsed_ms,
                attempts: s.attempts,
            });
        }
        let mut notes = Vec::new();
        for a in annotations.get(&r.chain_id).into_iter().flatten() {
            let file = format!("note-{:02}.txt", a.step_index);
            write(chain_dir.join(&file), &a.description.text)?;
            notes.push(NoteMeta {
                step_index: a.step_index,
                file,
                producer: a.producer.clone(),
                timestamp_ms: a.timestamp_ms,
            });
        }
        let meta = ChainMeta {
            chain_id: r.chain_id.clone(),
            mode: r.mode,
            config: r.config.clone(),
            status: r.status.clone(),
            seed_file: SEED_FILE.into(),
            steps,
            annotations: notes,
        };
        let json = serde_json::to_string_pretty(&meta).expect("chain metadata serialises");
        write(chain_dir.join(META), &(json + "\n"))?;
    }
    Ok(())
}

/// Records sorted by chain id, plus annotations keyed by chain id.
pub type ChainSet = (Vec<ChainRecord>, BTreeMap<String, Vec<Annotation>>);

/// Read every chain directory under `dir`, sorted by chain id.
pub fn import_chains(dir: impl AsRef<Path>) -> Result<ChainSet, ExportError> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut chain_dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META).is_file())
        .collect();
    chain_dirs.sort();
    let mut records = Vec::new();
    let mut annotations = BTreeMap::new();
    for chain_dir in chain_dirs {
        let meta_path = chain_dir.join(META);
        let meta: ChainMeta =
            serde_json::from_str(&read(meta_path.clone())?).map_err(|e| ExportError::Meta {
                path: meta_path.clone(),
                message: e.to_string(),
            })?;
        let mut steps = Vec::with_capacity(meta.steps.len());
        for s in meta.steps {
            let path = chain_dir.join(&s.file);
            let payload = match s.kind {
                PayloadKind::Grid => Payload::Grid(read_grid(path)?),
                PayloadKind::Description => Payload::Description(read(path)?),
            };
            steps.push(ChainStep {
                index: s.index,
                payload,
                producer: s.producer,
                timestamp_ms: s.timestamp_ms,
                elapsed_ms: s.elapsed_ms,
                attempts: s.attempts,
            });
        }
        let mut notes = Vec::new();
        for n in meta.annotations {
            notes.push(Annotation {
                chain_id: meta.chain_id.clone(),
                step_index: n.step_index,
                description: Description::new(read(chain_dir.join(&n.file))?),
                producer: n.producer,
                timestamp_ms: n.timestamp_ms,
            });
        }
        if !notes.is_empty() {
            annotations.insert(meta.chain_id.clone(), notes);
        }
        let record = ChainRecord {
            chain_id: meta.chain_id,
            mode: meta.mode,
            seed_grid: read_grid(chain_dir.join(&meta.seed_file))?,
            steps,
            config: meta.config,
            status: meta.status,
        };
        record.validate().map_err(|e| ExportError::Meta {
            path: meta_path,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((records, annotations))
}
