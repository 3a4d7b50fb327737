use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    AgentBackend, BackendError, ChainConfig, ChainRecord, ChainStatus, ChainStep, Description,
    DescriptionError, Mode, Payload, Produced, Producer, RecordError, SeedDistribution,
    StepContext, DEFAULT_STEPS,
};
use crate::exec::Execution;
use crate::grid::{sample_grid, Grid, DEFAULT_SIZE};
use crate::seed::{derive, hash_str, rng_for};

const SEED_LABEL: u64 = 0x5EED;
const ANNOTATE_LABEL: u64 = 0xA770;
/// Milliseconds between consecutive steps under the logical clock.
pub const LOGICAL_TICK_MS: u64 = 1000;

/// Timestamps from a deterministic step counter or from the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Logical,
    System,
}

impl ClockMode {
    fn stamp(self, index: usize) -> u64 {
        match self {
            ClockMode::Logical => index as u64 * LOGICAL_TICK_MS,
            ClockMode::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    pub steps: usize,
    pub grid_size: usize,
    /// Calls per step before the chain is truncated.
    pub max_attempts: u32,
    pub validate_descriptions: bool,
    pub clock: ClockMode,
    pub seed_distribution: SeedDistribution,
    pub execution: Execution,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            steps: DEFAULT_STEPS,
            grid_size: DEFAULT_SIZE,
            max_attempts: 3,
            validate_descriptions: true,
            clock: ClockMode::Logical,
            seed_distribution: SeedDistribution::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("chain {} step {index}: {source}", partial.chain_id)]
    Backend {
        index: usize,
        source: BackendError,
        partial: Box<ChainRecord>,
    },
    #[error("chain {} step {index}: {source}", partial.chain_id)]
    Validation {
        index: usize,
        source: DescriptionError,
        partial: Box<ChainRecord>,
    },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("post-hoc annotation needs a complete unimodal chain")]
    NotAnnotatable,
}

impl ChainError {
    /// The truncated record, for failures that happen mid-chain.
    pub fn into_partial(self) -> Option<ChainRecord> {
        match self {
            ChainError::Backend { partial, .. } | ChainError::Validation { partial, .. } => {
                Some(*partial)
            }
            _ => None,
        }
    }
}

/// A description of one board of a finished unimodal chain, stored next to
/// the record rather than inside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub chain_id: String,
    /// Position of the described board in the chain.
    pub step_index: usize,
    pub description: Description,
    pub producer: Producer,
    pub timestamp_ms: u64,
}

enum Failure {
    Backend(BackendError),
    Validation(DescriptionError),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Backend(e) => e.fmt(f),
            Failure::Validation(e) => e.fmt(f),
        }
    }
}

impl Failure {
    fn into_error(self, index: usize, partial: ChainRecord) -> ChainError {
        let partial = Box::new(partial);
        match self {
            Failure::Backend(source) => ChainError::Backend {
                index,
                source,
                partial,
            },
            Failure::Validation(source) => ChainError::Validation {
                index,
                source,
                partial,
            },
        }
    }
}

/// Call `f` until it succeeds or the attempt budget runs out.
fn with_retries<T>(
    chain_id: &str,
    index: usize,
    seed: impl Fn(u32) -> u64,
    max_attempts: u32,
    mut f: impl FnMut(&StepContext) -> Result<Produced<T>, Failure>,
) -> Result<(Produced<T>, u32), Failure> {
    let mut last = None;
    for attempt in 0..max_attempts.max(1) {
        let ctx = StepContext {
            chain_id: chain_id.to_string(),
            index,
            attempt,
            seed: seed(attempt),
        };
        match f(&ctx) {
            Ok(p) => return Ok((p, attempt)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn check_description(text: &str, validate: bool) -> Result<(), Failure> {
    if validate {
        Description::new(text)
            .validate()
            .map_err(Failure::Validation)?;
    }
    Ok(())
}

/// Run one chain of `opts.steps` visual steps from `seed_grid`.
///
/// On failure the record built so far is returned inside the error, marked
/// truncated.
pub fn run_chain(
    backend: &dyn AgentBackend,
    chain_id: &str,
    seed_grid: Grid,
    chain_seed: u64,
    mode: Mode,
    opts: &ChainOptions,
) -> Result<ChainRecord, ChainError> {
    let config = ChainConfig {
        grid_size: seed_grid.size(),
        steps: opts.steps,
        seed_distribution: opts.seed_distribution,
        backends: vec![backend.tag()],
        master_seed: None,
        chain_seed,
        validate_descriptions: opts.validate_descriptions,
    };
    let mut record = ChainRecord::new(chain_id, mode, seed_grid, config);
    if opts.steps == 0 {
        record.status = ChainStatus::Complete;
    }
    let tag = backend.tag();
    while let Some((index, _)) = record.frontier() {
        let seed = |attempt: u32| derive(chain_seed, &[index as u64, attempt as u64]);
        let started = Instant::now();
        let outcome = match record.frontier_stimulus() {
            Payload::Grid(g) if mode == Mode::Multimodal => {
                with_retries(chain_id, index, seed, opts.max_attempts, |ctx| {
                    let p = backend.describe(ctx, &g).map_err(Failure::Backend)?;
                    check_description(&p.value, opts.validate_descriptions)?;
                    Ok(p)
                })
                .map(|(p, a)| (Payload::Description(p.value), p.producer_id, a))
            }
            Payload::Grid(g) => with_retries(chain_id, index, seed, opts.max_attempts, |ctx| {
                backend.reproduce(ctx, &g).map_err(Failure::Backend)
            })
            .map(|(p, a)| (Payload::Grid(p.value), p.producer_id, a)),
            Payload::Description(d) => {
                with_retries(chain_id, index, seed, opts.max_attempts, |ctx| {
                    backend.render(ctx, &d).map_err(Failure::Backend)
                })
                .map(|(p, a)| (Payload::Grid(p.value), p.producer_id, a))
            }
        };
        match outcome {
            Ok((payload, producer_id, attempts)) => {
                let elapsed_ms = match opts.clock {
                    ClockMode::Logical => 0,
                    ClockMode::System => started.elapsed().as_millis() as u64,
                };
                record.push(ChainStep {
                    index,
                    payload,
                    producer: Producer {
                        backend: tag.clone(),
                        id: producer_id,
                    },
                    timestamp_ms: opts.clock.stamp(index),
                    elapsed_ms,
                    attempts,
                })?;
            }
            Err(failure) => {
                record.status = ChainStatus::Truncated {
                    reason: format!("step {index}: {failure}"),
                };
                return Err(failure.into_error(index, record));
            }
        }
    }
    Ok(record)
}

/// Seed board `index` of a batch. Depends only on the master seed, the index
/// and the distribution, so both modes share seeds chain-for-chain.
pub fn seed_board(master_seed: u64, index: usize, size: usize, dist: SeedDistribution) -> Grid {
    let mut rng = rng_for(master_seed, &[SEED_LABEL, index as u64]);
    match dist {
        SeedDistribution::Bernoulli { p } => sample_grid(&mut rng, size, p),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// One record per chain in index order, truncated ones included.
    pub records: Vec<ChainRecord>,
}

impl BatchResult {
    pub fn complete(&self) -> impl Iterator<Item = &ChainRecord> {
        self.records.iter().filter(|r| r.is_complete())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ChainRecord> {
        self.records.iter().filter(|r| !r.is_complete())
    }
}

pub fn chain_id(mode: Mode, index: usize) -> String {
    format!("{mode}-{index:04}")
}

/// Run `n_chains` independent chains. Per-chain failures are kept as
/// truncated records; the batch itself never aborts.
pub fn batch_run(
    backend: &dyn AgentBackend,
    n_chains: usize,
    mode: Mode,
    master_seed: u64,
    opts: &ChainOptions,
) -> BatchResult {
    let records = opts.execution.map_range(n_chains, |i| {
        let seed = seed_board(master_seed, i, opts.grid_size, opts.seed_distribution);
        let chain_seed = derive(master_seed, &[hash_str(mode.as_str()), i as u64]);
        let id = chain_id(mode, i);
        let mut record = match run_chain(backend, &id, seed, chain_seed, mode, opts) {
            Ok(r) => r,
            Err(e) => e
                .into_partial()
                .expect("mid-chain failures carry a partial record"),
        };
        record.config.master_seed = Some(master_seed);
        record
    });
    BatchResult { records }
}

/// Describe every produced board of a complete unimodal chain.
pub fn annotate_posthoc(
    record: &ChainRecord,
    describer: &dyn AgentBackend,
    opts: &ChainOptions,
) -> Result<Vec<Annotation>, ChainError> {
    if record.mode != Mode::Unimodal || !record.is_complete() {
        return Err(ChainError::NotAnnotatable);
    }
    let tag = describer.tag();
    let mut out = Vec::with_capacity(record.steps.len());
    for step in &record.steps {
        let board = step.payload.as_grid().expect("unimodal steps are boards");
        let seed = |attempt: u32| {
            derive(
                record.config.chain_seed,
                &[ANNOTATE_LABEL, step.index as u64, attempt as u64],
            )
        };
        let produced = with_retries(
            &record.chain_id,
            step.index,
            seed,
            opts.max_attempts,
            |ctx| {
                let p = describer.describe(ctx, board).map_err(Failure::Backend)?;
                check_description(&p.value, opts.validate_descriptions)?;
                Ok(p)
            },
        );
        let (p, _) = produced.map_err(|f| f.into_error(step.index, record.clone()))?;
        out.push(Annotation {
            chain_id: record.chain_id.clone(),
            step_index: step.index,
            description: Description::new(p.value),
            producer: Producer {
                backend: tag.clone(),
                id: p.producer_id,
            },
            timestamp_ms: opts.clock.stamp(step.index),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{IdentityBackend, PayloadKind};
    use std::sync::atomic::{AtomicU32, Ordering};

    /// Fails the first `failures` describe calls, then copies the identity backend.
    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl AgentBackend for Flaky {
        fn tag(&self) -> String {
            "flaky".into()
        }
        fn reproduce(&self, ctx: &StepContext, g: &Grid) -> Result<Produced<Grid>, BackendError> {
            IdentityBackend.reproduce(ctx, g)
        }
        fn describe(&self, ctx: &StepContext, g: &Grid) -> Result<Produced<String>, BackendError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.failures {
                return Ok(Produced::new("red red red red red".to_string(), "bad"));
            }
            IdentityBackend.describe(ctx, g)
        }
        fn render(&self, ctx: &StepContext, d: &str) -> Result<Produced<Grid>, BackendError> {
            IdentityBackend.render(ctx, d)
        }
    }

    #[test]
    fn identity_chain_stays_on_seed() {
        let seed = crate::grid::random_grid(1, 7, 0.5);
        let r = run_chain(
            &IdentityBackend,
            "c",
            seed.clone(),
            1,
            Mode::Unimodal,
            &ChainOptions::default(),
        )
        .unwrap();
        assert_eq!(r.steps.len(), 10);
        assert!(r.boards().iter().all(|b| **b == seed));
        assert!(r.is_complete());
    }

    #[test]
    fn multimodal_record_alternates() {
        let seed = crate::grid::random_grid(2, 7, 0.5);
        let r = run_chain(
            &IdentityBackend,
            "c",
            seed,
            2,
            Mode::Multimodal,
            &ChainOptions::default(),
        )
        .unwrap();
        assert_eq!(r.steps.len(), 20);
        for (i, s) in r.steps.iter().enumerate() {
            let want = if i % 2 == 0 {
                PayloadKind::Description
            } else {
                PayloadKind::Grid
            };
            assert_eq!(s.payload.kind(), want);
            assert_eq!(s.index, i + 1);
        }
        assert!(r.validate().is_ok());
    }

    #[test]
    fn retries_then_succeeds() {
        let b = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
        };
        let opts = ChainOptions {
            steps: 1,
            ..ChainOptions::default()
        };
        let r = run_chain(&b, "c", Grid::blank(7), 0, Mode::Multimodal, &opts).unwrap();
        assert_eq!(r.steps[0].attempts, 2);
    }

    #[test]
    fn exhausted_retries_truncate_the_chain() {
        let b = Flaky {
            failures: 100,
            calls: AtomicU32::new(0),
        };
        let err = run_chain(
            &b,
            "c",
            Grid::blank(7),
            0,
            Mode::Multimodal,
            &ChainOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ChainError::Validation { index: 1, .. }));
        let partial = err.into_partial().unwrap();
        assert!(partial.steps.is_empty());
        assert!(matches!(partial.status, ChainStatus::Truncated { .. }));

        let lenient = ChainOptions {
            validate_descriptions: false,
            ..ChainOptions::default()
        };
        let b = Flaky {
            failures: 1,
            calls: AtomicU32::new(0),
        };
        // The unvalidated description cannot be rendered by the identity renderer.
        let err = run_chain(&b, "c", Grid::blank(7), 0, Mode::Multimodal, &lenient).unwrap_err();
        assert!(matches!(err, ChainError::Backend { index: 2, .. }));
        assert_eq!(err.into_partial().unwrap().steps.len(), 1);
    }

    #[test]
    fn batch_modes_share_seed_boards() {
        let opts = ChainOptions {
            steps: 2,
            ..ChainOptions::default()
        };
        let uni = batch_run(&IdentityBackend, 20, Mode::Unimodal, 42, &opts);
        let multi = batch_run(&IdentityBackend, 20, Mode::Multimodal, 42, &opts);
        let other = batch_run(&IdentityBackend, 20, Mode::Unimodal, 43, &opts);
        for i in 0..20 {
            assert_eq!(uni.records[i].seed_grid, multi.records[i].seed_grid);
        }
        assert_ne!(
            uni.records.iter().map(|r| &r.seed_grid).collect::<Vec<_>>(),
            other
                .records
                .iter()
                .map(|r| &r.seed_grid)
                .collect::<Vec<_>>()
        );
        assert_eq!(uni.complete().count(), 20);
    }

    #[test]
    fn batch_keeps_going_after_failures() {
        let b = Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
        };
        let opts = ChainOptions {
            steps: 1,
            execution: Execution::Sequential,
            ..ChainOptions::default()
        };
        let out = batch_run(&b, 3, Mode::Multimodal, 0, &opts);
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.failures().count(), 1);
    }

    #[test]
    fn annotation_covers_every_board() {
        let opts = ChainOptions::default();
        let r = run_chain(
            &IdentityBackend,
            "c",
            crate::grid::random_grid(3, 7, 0.5),
            3,
            Mode::Unimodal,
            &opts,
        )
        .unwrap();
        let notes = annotate_posthoc(&r, &IdentityBackend, &opts).unwrap();
        assert_eq!(notes.len(), 10);
        assert!(notes.iter().enumerate().all(|(i, a)| a.step_index == i + 1));
        let m = run_chain(
            &IdentityBackend,
            "m",
            Grid::blank(7),
            3,
            Mode::Multimodal,
            &opts,
        )
        .unwrap();
        assert!(matches!(
            annotate_posthoc(&m, &IdentityBackend, &opts),
            Err(ChainError::NotAnnotatable)
        ));
    }
}
