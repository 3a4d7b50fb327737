//! Serial-reproduction chains: records, the agent interface, the engine that
//! drives a backend through the protocol, the append-only chain log and the
//! directory export used for analysis.

mod engine;
pub mod export;
pub mod log;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{parse_grid, Grid};

pub use engine::{
    annotate_posthoc, batch_run, chain_id, run_chain, seed_board, Annotation, BatchResult,
    ChainError, ChainOptions, ClockMode, LOGICAL_TICK_MS,
};

/// Visual steps per chain in the reference protocol.
pub const DEFAULT_STEPS: usize = 10;
/// Chains per condition in the reference protocol.
pub const DEFAULT_CHAINS: usize = 100;
pub const MIN_WORDS: usize = 5;
pub const MIN_UNIQUE_WORDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unimodal,
    Multimodal,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Unimodal, Mode::Multimodal];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unimodal => "unimodal",
            Mode::Multimodal => "multimodal",
        }
    }

    /// Payload expected at 1-based step position `index`.
    pub fn expected_kind(self, index: usize) -> PayloadKind {
        match self {
            Mode::Multimodal if index % 2 == 1 => PayloadKind::Description,
            _ => PayloadKind::Grid,
        }
    }

    /// Payloads in a complete chain of `steps` visual steps.
    pub fn payload_count(self, steps: usize) -> usize {
        match self {
            Mode::Unimodal => steps,
            Mode::Multimodal => 2 * steps,
        }
    }

    /// Time coordinate of step `index`: boards at whole steps, descriptions
    /// at the half step before the board they lead to.
    pub fn time_of(self, index: usize) -> f64 {
        match self {
            Mode::Unimodal => index as f64,
            Mode::Multimodal => index as f64 / 2.0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unimodal" | "uni" => Ok(Mode::Unimodal),
            "multimodal" | "multi" => Ok(Mode::Multimodal),
            other => Err(format!("unknown chain mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Grid,
    Description,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::Grid => "grid",
            PayloadKind::Description => "description",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Payload {
    Grid(Grid),
    Description(String),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Grid(_) => PayloadKind::Grid,
            Payload::Description(_) => PayloadKind::Description,
        }
    }

    pub fn as_grid(&self) -> Option<&Grid> {
        match self {
            Payload::Grid(g) => Some(g),
            Payload::Description(_) => None,
        }
    }

    pub fn as_description(&self) -> Option<&str> {
        match self {
            Payload::Description(d) => Some(d),
            Payload::Grid(_) => None,
        }
    }
}

/// Who produced a payload: a participant session, a simulated agent seed or
/// an LLM request id, tagged by backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Producer {
    pub backend: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    /// 1-based position in the chain; the seed board is position 0.
    pub index: usize,
    pub payload: Payload,
    pub producer: Producer,
    pub timestamp_ms: u64,
    pub elapsed_ms: u64,
    /// Failed attempts before this payload was accepted.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub attempts: u32,
}

fn is_zero(x: &u32) -> bool {
    *x == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeedDistribution {
    /// Each tile red independently with probability `p`.
    Bernoulli { p: f64 },
}

impl Default for SeedDistribution {
    fn default() -> Self {
        SeedDistribution::Bernoulli { p: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub grid_size: usize,
    pub steps: usize,
    pub seed_distribution: SeedDistribution,
    pub backends: Vec<String>,
    pub master_seed: Option<u64>,
    pub chain_seed: u64,
    pub validate_descriptions: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum ChainStatus {
    Live,
    Complete,
    Truncated { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain_id: String,
    pub mode: Mode,
    pub seed_grid: Grid,
    pub steps: Vec<ChainStep>,
    pub config: ChainConfig,
    pub status: ChainStatus,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("step {index}: expected a {expected}, found a {found}")]
    WrongPayload {
        index: usize,
        expected: PayloadKind,
        found: PayloadKind,
    },
    #[error("step index {found} where {expected} was expected")]
    IndexGap { expected: usize, found: usize },
    #[error("step {index}: board size {found} differs from chain size {expected}")]
    BoardSize {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("participant {0} appears more than once")]
    RepeatedParticipant(String),
    #[error("chain already has all {0} steps")]
    AlreadyComplete(usize),
}

/// Producer backend tag used for human participants; once-per-chain
/// participation is checked for this tag only.
pub const PARTICIPANT_BACKEND: &str = "participant";

impl ChainRecord {
    pub fn new(
        chain_id: impl Into<String>,
        mode: Mode,
        seed_grid: Grid,
        config: ChainConfig,
    ) -> Self {
        ChainRecord {
            chain_id: chain_id.into(),
            mode,
            seed_grid,
            steps: Vec::new(),
            config,
            status: ChainStatus::Live,
        }
    }

    pub fn target_len(&self) -> usize {
        self.mode.payload_count(self.config.steps)
    }

    pub fn is_complete(&self) -> bool {
        self.status == ChainStatus::Complete
    }

    /// Index and payload kind of the next step.
    pub fn frontier(&self) -> Option<(usize, PayloadKind)> {
        let next = self.steps.len() + 1;
        (self.status == ChainStatus::Live && next <= self.target_len())
            .then(|| (next, self.mode.expected_kind(next)))
    }

    /// Payload the next producer works from.
    pub fn frontier_stimulus(&self) -> Payload {
        self.steps
            .last()
            .map(|s| s.payload.clone())
            .unwrap_or_else(|| Payload::Grid(self.seed_grid.clone()))
    }

    /// Append a step after checking index, alternation, size and participation.
    pub fn push(&mut self, step: ChainStep) -> Result<(), RecordError> {
        let expected = self.steps.len() + 1;
        if expected > self.target_len() {
            return Err(RecordError::AlreadyComplete(self.target_len()));
        }
        self.check_step(expected, &step)?;
        self.steps.push(step);
        if self.steps.len() == self.target_len() {
            self.status = ChainStatus::Complete;
        }
        Ok(())
    }

    fn check_step(&self, expected: usize, step: &ChainStep) -> Result<(), RecordError> {
        if step.index != expected {
            return Err(RecordError::IndexGap {
                expected,
                found: step.index,
            });
        }
        let want = self.mode.expected_kind(expected);
        if step.payload.kind() != want {
            return Err(RecordError::WrongPayload {
                index: expected,
                expected: want,
                found: step.payload.kind(),
            });
        }
        if let Payload::Grid(g) = &step.payload {
            if g.size() != self.seed_grid.size() {
                return Err(RecordError::BoardSize {
                    index: expected,
                    expected: self.seed_grid.size(),
                    found: g.size(),
                });
            }
        }
        if step.producer.backend == PARTICIPANT_BACKEND && self.has_participant(&step.producer.id) {
            return Err(RecordError::RepeatedParticipant(step.producer.id.clone()));
        }
        Ok(())
    }

    pub fn has_participant(&self, id: &str) -> bool {
        self.steps
            .iter()
            .any(|s| s.producer.backend == PARTICIPANT_BACKEND && s.producer.id == id)
    }

    /// Re-check every structural invariant of a stored record.
    pub fn validate(&self) -> Result<(), RecordError> {
        let mut replay = ChainRecord {
            steps: Vec::new(),
            status: ChainStatus::Live,
            ..self.clone()
        };
        for s in &self.steps {
            replay.push(s.clone())?;
        }
        Ok(())
    }

    /// Seed followed by every produced board, in order.
    pub fn boards(&self) -> Vec<&Grid> {
        std::iter::once(&self.seed_grid)
            .chain(self.steps.iter().filter_map(|s| s.payload.as_grid()))
            .collect()
    }

    pub fn descriptions(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter_map(|s| s.payload.as_description())
            .collect()
    }
}

/// A description with its word statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub word_count: usize,
    pub unique_word_count: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DescriptionError {
    #[error("description has {found} words, at least {MIN_WORDS} required")]
    TooFewWords { found: usize },
    #[error("description has {found} distinct words, at least {MIN_UNIQUE_WORDS} required")]
    TooFewUniqueWords { found: usize },
}

impl Description {
    /// Words are whitespace-separated; uniqueness ignores case.
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        let mut unique = words.clone();
        unique.sort();
        unique.dedup();
        Description {
            word_count: words.len(),
            unique_word_count: unique.len(),
            text,
        }
    }

    pub fn validate(&self) -> Result<(), DescriptionError> {
        if self.word_count < MIN_WORDS {
            return Err(DescriptionError::TooFewWords {
                found: self.word_count,
            });
        }
        if self.unique_word_count < MIN_UNIQUE_WORDS {
            return Err(DescriptionError::TooFewUniqueWords {
                found: self.unique_word_count,
            });
        }
        Ok(())
    }

    pub fn validated(text: impl Into<String>) -> Result<Self, DescriptionError> {
        let d = Description::new(text);
        d.validate()?;
        Ok(d)
    }
}

/// Where in a chain an agent call happens, and the seed it must use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepContext {
    pub chain_id: String,
    pub index: usize,
    pub attempt: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Produced<T> {
    pub value: T,
    pub producer_id: String,
}

impl<T> Produced<T> {
    pub fn new(value: T, producer_id: impl Into<String>) -> Self {
        Produced {
            value,
            producer_id: producer_id.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unusable output: {0}")]
    InvalidOutput(String),
}

/// The three chain roles. Implementations must be deterministic given the
/// context seed if records are to be reproducible.
pub trait AgentBackend: Send + Sync {
    fn tag(&self) -> String;
    fn reproduce(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<Grid>, BackendError>;
    fn describe(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<String>, BackendError>;
    fn render(&self, ctx: &StepContext, description: &str) -> Result<Produced<Grid>, BackendError>;
}

/// Copies boards unchanged; descriptions spell out the rows so that
/// rendering recovers the board exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

const IDENTITY_PREFIX: &str = "board with rows";

impl AgentBackend for IdentityBackend {
    fn tag(&self) -> String {
        "identity".into()
    }

    fn reproduce(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<Grid>, BackendError> {
        Ok(Produced::new(
            grid.clone(),
            format!("identity-{}", ctx.index),
        ))
    }

    fn describe(&self, ctx: &StepContext, grid: &Grid) -> Result<Produced<String>, BackendError> {
        let rows = grid.to_text().replace('\n', " ");
        Ok(Produced::new(
            format!("{IDENTITY_PREFIX} {rows}"),
            format!("identity-{}", ctx.index),
        ))
    }

    fn render(&self, ctx: &StepContext, description: &str) -> Result<Produced<Grid>, BackendError> {
        let rows = description
            .strip_prefix(IDENTITY_PREFIX)
            .ok_or_else(|| BackendError::InvalidOutput("not an identity description".into()))?;
        let text = rows.split_whitespace().collect::<Vec<_>>().join("\n");
        let g = parse_grid(&text).map_err(|e| BackendError::InvalidOutput(e.to_string()))?;
        Ok(Produced::new(g, format!("identity-{}", ctx.index)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(steps: usize) -> ChainConfig {
        ChainConfig {
            grid_size: 3,
            steps,
            seed_distribution: SeedDistribution::default(),
            backends: vec!["test".into()],
            master_seed: None,
            chain_seed: 0,
            validate_descriptions: true,
        }
    }

    fn step(index: usize, payload: Payload, who: &str) -> ChainStep {
        ChainStep {
            index,
            payload,
            producer: Producer {
                backend: PARTICIPANT_BACKEND.into(),
                id: who.into(),
            },
            timestamp_ms: 0,
            elapsed_ms: 0,
            attempts: 0,
        }
    }

    #[test]
    fn description_word_counts() {
        let d = Description::new("red cross centered on white background board");
        assert_eq!((d.word_count, d.unique_word_count), (7, 7));
        assert!(d.validate().is_ok());
        assert_eq!(
            Description::validated("red red red red red"),
            Err(DescriptionError::TooFewUniqueWords { found: 1 })
        );
        assert_eq!(
            Description::validated("red cross on white"),
            Err(DescriptionError::TooFewWords { found: 4 })
        );
        assert_eq!(
            Description::new("Red red RED blue green pink").unique_word_count,
            4
        );
    }

    #[test]
    fn multimodal_alternation_is_enforced() {
        let mut r = ChainRecord::new("c", Mode::Multimodal, Grid::blank(3), config(2));
        assert_eq!(r.frontier(), Some((1, PayloadKind::Description)));
        let err = r
            .push(step(1, Payload::Grid(Grid::blank(3)), "a"))
            .unwrap_err();
        assert!(matches!(err, RecordError::WrongPayload { .. }));
        r.push(step(1, Payload::Description("x".into()), "a"))
            .unwrap();
        assert_eq!(r.frontier(), Some((2, PayloadKind::Grid)));
        assert!(matches!(
            r.push(step(3, Payload::Grid(Grid::blank(3)), "b")),
            Err(RecordError::IndexGap {
                expected: 2,
                found: 3
            })
        ));
        assert!(matches!(
            r.push(step(2, Payload::Grid(Grid::blank(3)), "a")),
            Err(RecordError::RepeatedParticipant(_))
        ));
        r.push(step(2, Payload::Grid(Grid::blank(3)), "b")).unwrap();
        r.push(step(3, Payload::Description("y".into()), "c"))
            .unwrap();
        r.push(step(4, Payload::Grid(Grid::filled(3)), "d"))
            .unwrap();
        assert!(r.is_complete());
        assert_eq!(r.frontier(), None);
        assert_eq!(r.boards().len(), 3);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn identity_description_round_trips() {
        let g = crate::grid::random_grid(4, 7, 0.5);
        let ctx = StepContext {
            chain_id: "c".into(),
            index: 1,
            attempt: 0,
            seed: 0,
        };
        let d = IdentityBackend.describe(&ctx, &g).unwrap().value;
        assert!(Description::validated(d.clone()).is_ok());
        assert_eq!(IdentityBackend.render(&ctx, &d).unwrap().value, g);
    }

    #[test]
    fn mode_time_coordinates() {
        assert_eq!(Mode::Multimodal.time_of(1), 0.5);
        assert_eq!(Mode::Multimodal.time_of(2), 1.0);
        assert_eq!(Mode::Unimodal.time_of(3), 3.0);
        assert_eq!("multi".parse::<Mode>().unwrap(), Mode::Multimodal);
    }
}
