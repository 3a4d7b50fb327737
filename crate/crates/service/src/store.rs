//! Event-sourced state for live chains and participant sessions.
//!
//! Every mutation is an event appended to one JSONL log and applied by
//! [`ServiceState::apply`]; replaying the log through the same function
//! rebuilds the state exactly. Chain events share the core chain-log
//! format, so the log also loads with `ChainStore::load`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use serial_repro_core::chain::log::{ChainEvent, ChainStore, JsonlWriter, LogError};
use serial_repro_core::chain::{
    chain_id, seed_board, ChainConfig, ChainRecord, ChainStep, Description, DescriptionError, Mode,
    Payload, PayloadKind, Producer, SeedDistribution, PARTICIPANT_BACKEND,
};
use serial_repro_core::seed::{hash_str, rng_for};
use thiserror::Error;

pub const MAX_TRIALS: usize = 10;
pub const DISPLAY_MS: u64 = 5_000;
pub const LEASE_MS: u64 = 5 * 60 * 1000;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Test clock advanced by hand.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialKind {
    MemorizeReproduce,
    Describe,
    Reconstruct,
}

impl TrialKind {
    fn for_step(mode: Mode, kind: PayloadKind) -> Self {
        match (mode, kind) {
            (_, PayloadKind::Description) => TrialKind::Describe,
            (Mode::Multimodal, PayloadKind::Grid) => TrialKind::Reconstruct,
            (Mode::Unimodal, PayloadKind::Grid) => TrialKind::MemorizeReproduce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub lease_id: String,
    pub session_id: String,
    pub chain_id: String,
    pub step_index: usize,
    pub kind: PayloadKind,
    pub issued_ms: u64,
    pub expires_ms: u64,
    /// A failed description validation has already used the one retry.
    #[serde(default)]
    pub retry_used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub trials_completed: usize,
    pub visited: BTreeSet<String>,
    pub active: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionOpened {
        session_id: String,
        participant_id: String,
        at_ms: u64,
    },
    TrialLeased {
        lease: Lease,
    },
    LeaseExpired {
        lease_id: String,
        at_ms: u64,
    },
    ValidationRejected {
        lease_id: String,
        message: String,
    },
    LeaseReleased {
        lease_id: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StoreEvent {
    Chain(ChainEvent),
    Session(SessionEvent),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("participant id must be 1-64 characters of [A-Za-z0-9_-]")]
    BadParticipant,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown chain {0}")]
    UnknownChain(String),
    #[error("lease {0} is not active for this session")]
    UnknownLease(String),
    #[error("session has completed {0} trials")]
    SessionExhausted(usize),
    #[error("no eligible chain")]
    NoEligibleChain,
    #[error("lease expired")]
    LeaseExpired,
    #[error("expected a {expected:?} payload, got {found:?}")]
    WrongPayloadType {
        expected: PayloadKind,
        found: PayloadKind,
    },
    #[error("board must be {expected}x{expected}, got {found}x{found}")]
    BoardSize { expected: usize, found: usize },
    #[error("submitted {elapsed_ms} ms after assignment, minimum is {minimum_ms} ms")]
    TooFast { elapsed_ms: u64, minimum_ms: u64 },
    #[error("invalid description: {source}")]
    Validation {
        source: DescriptionError,
        lease_retained: bool,
    },
    #[error("chain {0} already exists")]
    DuplicateChain(String),
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
    #[error("event log: {0}")]
    Log(String),
}

impl From<LogError> for StoreError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::DuplicateChain(c) => StoreError::DuplicateChain(c),
            LogError::UnknownChain(c) => StoreError::UnknownChain(c),
            other => StoreError::Log(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub max_trials: usize,
    pub display_ms: u64,
    pub lease_ms: u64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            max_trials: MAX_TRIALS,
            display_ms: DISPLAY_MS,
            lease_ms: LEASE_MS,
        }
    }
}

/// Everything the service knows, rebuilt purely from events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceState {
    pub chains: ChainStore,
    pub sessions: BTreeMap<String, Session>,
    /// Active lease per chain.
    pub leases: BTreeMap<String, Lease>,
    pub leases_issued: u64,
}

impl ServiceState {
    pub fn replay<'a>(
        events: impl IntoIterator<Item = &'a StoreEvent>,
    ) -> Result<Self, StoreError> {
        let mut s = ServiceState::default();
        for e in events {
            s.apply(e)?;
        }
        Ok(s)
    }

    fn lease_by_id(&self, lease_id: &str) -> Option<&Lease> {
        self.leases.values().find(|l| l.lease_id == lease_id)
    }

    fn drop_lease(&mut self, lease_id: &str) -> Result<Lease, StoreError> {
        let chain = self
            .lease_by_id(lease_id)
            .map(|l| l.chain_id.clone())
            .ok_or_else(|| StoreError::Inconsistent(format!("no lease {lease_id}")))?;
        let lease = self.leases.remove(&chain).expect("found above");
        if let Some(s) = self.sessions.get_mut(&lease.session_id) {
            if s.active.as_deref() == Some(lease_id) {
                s.active = None;
            }
        }
        Ok(lease)
    }

    pub fn apply(&mut self, event: &StoreEvent) -> Result<(), StoreError> {
        match event {
            StoreEvent::Chain(e) => {
                if let ChainEvent::StepCommitted { chain_id, step } = e {
                    if step.producer.backend == PARTICIPANT_BACKEND {
                        let lease = self
                            .leases
                            .get(chain_id)
                            .filter(|l| l.step_index == step.index)
                            .cloned()
                            .ok_or_else(|| {
                                StoreError::Inconsistent(format!(
                                    "participant step on unleased {chain_id}"
                                ))
                            })?;
                        self.chains.apply(e)?;
                        self.drop_lease(&lease.lease_id)?;
                        let s = self
                            .sessions
                            .get_mut(&lease.session_id)
                            .ok_or_else(|| StoreError::UnknownSession(lease.session_id.clone()))?;
                        s.trials_completed += 1;
                        return Ok(());
                    }
                }
                if let ChainEvent::ChainTruncated { chain_id, .. } = e {
                    if let Some(l) = self.leases.get(chain_id).map(|l| l.lease_id.clone()) {
                        self.drop_lease(&l)?;
                    }
                }
                self.chains.apply(e)?;
            }
            StoreEvent::Session(SessionEvent::SessionOpened {
                session_id,
                participant_id,
                ..
            }) => {
                if self.sessions.contains_key(session_id) {
                    return Err(StoreError::Inconsistent(format!(
                        "session {session_id} opened twice"
                    )));
                }
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        session_id: session_id.clone(),
                        participant_id: participant_id.clone(),
                        trials_completed: 0,
                        visited: BTreeSet::new(),
                        active: None,
                    },
                );
            }
            StoreEvent::Session(SessionEvent::TrialLeased { lease }) => {
                if self.leases.contains_key(&lease.chain_id) {
                    return Err(StoreError::Inconsistent(format!(
                        "chain {} leased twice",
                        lease.chain_id
                    )));
                }
                let s = self
                    .sessions
                    .get_mut(&lease.session_id)
                    .ok_or_else(|| StoreError::UnknownSession(lease.session_id.clone()))?;
                if s.active.is_some() || !s.visited.insert(lease.chain_id.clone()) {
                    return Err(StoreError::Inconsistent(format!(
                        "invalid lease {}",
                        lease.lease_id
                    )));
                }
                s.active = Some(lease.lease_id.clone());
                self.leases.insert(lease.chain_id.clone(), lease.clone());
                self.leases_issued += 1;
            }
            StoreEvent::Session(
                SessionEvent::LeaseExpired { lease_id, .. }
                | SessionEvent::LeaseReleased { lease_id, .. },
            ) => {
                self.drop_lease(lease_id)?;
            }
            StoreEvent::Session(SessionEvent::ValidationRejected { lease_id, .. }) => {
                let chain = self
                    .lease_by_id(lease_id)
                    .map(|l| l.chain_id.clone())
                    .ok_or_else(|| StoreError::Inconsistent(format!("no lease {lease_id}")))?;
                self.leases.get_mut(&chain).expect("found above").retry_used = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub lease_id: String,
    pub chain_id: String,
    pub step_index: usize,
    pub trial: TrialKind,
    pub expected: PayloadKind,
    pub stimulus: Payload,
    /// How long the stimulus is shown before it is hidden.
    pub display_ms: Option<u64>,
    pub expires_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub chain_id: String,
    pub step_index: usize,
    pub trials_completed: usize,
    pub chain_complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub mode: Mode,
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
    pub grid_size: usize,
}

fn session_id_for(participant: &str) -> String {
    format!("s-{:016x}", hash_str(participant))
}

fn valid_participant(p: &str) -> bool {
    (1..=64).contains(&p.len())
        && p.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

struct Inner {
    state: ServiceState,
    log: Option<JsonlWriter>,
    events: Vec<StoreEvent>,
}

/// Single-writer store: every command runs under one lock, appends its
/// events to the log and applies them.
pub struct Store {
    inner: Mutex<Inner>,
    clock: Box<dyn Clock>,
    policy: Policy,
    seed: u64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("policy", &self.policy)
            .field("seed", &self.seed)
            .finish()
    }
}

impl Store {
    pub fn in_memory(clock: impl Clock + 'static, policy: Policy, seed: u64) -> Self {
        Store {
            inner: Mutex::new(Inner {
                state: ServiceState::default(),
                log: None,
                events: Vec::new(),
            }),
            clock: Box::new(clock),
            policy,
            seed,
        }
    }

    /// Open (or create) a log file and replay whatever it already holds.
    pub fn open(
        path: impl AsRef<Path>,
        clock: impl Clock + 'static,
        policy: Policy,
        seed: u64,
    ) -> Result<Self, StoreError> {
        let events = read_store_events(path.as_ref())?;
        let state = ServiceState::replay(&events)?;
        let log = JsonlWriter::open(path.as_ref()).map_err(|e| StoreError::Log(e.to_string()))?;
        Ok(Store {
            inner: Mutex::new(Inner {
                state,
                log: Some(log),
                events,
            }),
            clock: Box::new(clock),
            policy,
            seed,
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("store poisoned")
    }

    fn commit(inner: &mut Inner, events: Vec<StoreEvent>) -> Result<(), StoreError> {
        for e in events {
            inner.state.apply(&e)?;
            if let Some(log) = &mut inner.log {
                log.append(&e)
                    .map_err(|err| StoreError::Log(err.to_string()))?;
            }
            inner.events.push(e);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ServiceState {
        self.lock().state.clone()
    }

    pub fn events(&self) -> Vec<StoreEvent> {
        self.lock().events.clone()
    }

    pub fn chain(&self, chain_id: &str) -> Option<ChainRecord> {
        self.lock().state.chains.records.get(chain_id).cloned()
    }

    pub fn session(&self, session_id: &str) -> Option<Session> {
        self.lock().state.sessions.get(session_id).cloned()
    }

    /// Create `spec.n` live chains for participants.
    pub fn launch_batch(&self, spec: BatchSpec) -> Result<Vec<String>, StoreError> {
        let mut inner = self.lock();
        let offset = inner
            .state
            .chains
            .records
            .values()
            .filter(|r| r.mode == spec.mode)
            .count();
        let mut events = Vec::new();
        let mut ids = Vec::new();
        for i in 0..spec.n {
            let id = chain_id(spec.mode, offset + i);
            if inner.state.chains.records.contains_key(&id) {
                return Err(StoreError::DuplicateChain(id));
            }
            let dist = SeedDistribution::default();
            events.push(StoreEvent::Chain(ChainEvent::ChainCreated {
                chain_id: id.clone(),
                mode: spec.mode,
                seed_grid: seed_board(spec.seed, offset + i, spec.grid_size, dist),
                config: ChainConfig {
                    grid_size: spec.grid_size,
                    steps: spec.steps,
                    seed_distribution: dist,
                    backends: vec![PARTICIPANT_BACKEND.into()],
                    master_seed: Some(spec.seed),
                    chain_seed: 0,
                    validate_descriptions: true,
                },
            }));
            ids.push(id);
        }
        Self::commit(&mut inner, events)?;
        Ok(ids)
    }

    /// New session for an unseen participant id, the existing one otherwise.
    pub fn open_session(&self, participant_id: &str) -> Result<Session, StoreError> {
        if !valid_participant(participant_id) {
            return Err(StoreError::BadParticipant);
        }
        let session_id = session_id_for(participant_id);
        let mut inner = self.lock();
        if let Some(s) = inner.state.sessions.get(&session_id) {
            return Ok(s.clone());
        }
        let at_ms = self.clock.now_ms();
        Self::commit(
            &mut inner,
            vec![StoreEvent::Session(SessionEvent::SessionOpened {
                session_id: session_id.clone(),
                participant_id: participant_id.into(),
                at_ms,
            })],
        )?;
        Ok(inner.state.sessions[&session_id].clone())
    }

    fn expire_stale(inner: &mut Inner, now: u64) -> Result<(), StoreError> {
        let stale: Vec<String> = inner
            .state
            .leases
            .values()
            .filter(|l| l.expires_ms <= now)
            .map(|l| l.lease_id.clone())
            .collect();
        let events = stale
            .into_iter()
            .map(|lease_id| {
                StoreEvent::Session(SessionEvent::LeaseExpired {
                    lease_id,
                    at_ms: now,
                })
            })
            .collect();
        Self::commit(inner, events)
    }

    fn assignment(&self, state: &ServiceState, lease: &Lease) -> Assignment {
        let record = &state.chains.records[&lease.chain_id];
        let trial = TrialKind::for_step(record.mode, lease.kind);
        Assignment {
            lease_id: lease.lease_id.clone(),
            chain_id: lease.chain_id.clone(),
            step_index: lease.step_index,
            trial,
            expected: lease.kind,
            stimulus: record.frontier_stimulus(),
            display_ms: (trial == TrialKind::MemorizeReproduce).then_some(self.policy.display_ms),
            expires_ms: lease.expires_ms,
        }
    }

    /// Lease the frontier of a uniformly chosen eligible chain. A session
    /// with an unexpired lease gets that lease back.
    pub fn request_trial(&self, session_id: &str) -> Result<Assignment, StoreError> {
        let mut inner = self.lock();
        let now = self.clock.now_ms();
        Self::expire_stale(&mut inner, now)?;
        let session = inner
            .state
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(session_id.into()))?;
        if let Some(active) = &session.active {
            let lease = inner
                .state
                .lease_by_id(active)
                .expect("active lease exists")
                .clone();
            return Ok(self.assignment(&inner.state, &lease));
        }
        if session.trials_completed >= self.policy.max_trials {
            return Err(StoreError::SessionExhausted(session.trials_completed));
        }
        let eligible: Vec<(&String, usize, PayloadKind)> = inner
            .state
            .chains
            .records
            .iter()
            .filter(|(id, _)| {
                !session.visited.contains(*id) && !inner.state.leases.contains_key(*id)
            })
            .filter_map(|(id, r)| r.frontier().map(|(i, k)| (id, i, k)))
            .collect();
        let seq = inner.state.leases_issued;
        let mut rng = rng_for(self.seed, &[seq]);
        let &(chain, step_index, kind) = eligible
            .choose(&mut rng)
            .ok_or(StoreError::NoEligibleChain)?;
        let lease = Lease {
            lease_id: format!("l-{seq:06}"),
            session_id: session_id.into(),
            chain_id: chain.clone(),
            step_index,
            kind,
            issued_ms: now,
            expires_ms: now + self.policy.lease_ms,
            retry_used: false,
        };
        Self::commit(
            &mut inner,
            vec![StoreEvent::Session(SessionEvent::TrialLeased {
                lease: lease.clone(),
            })],
        )?;
        Ok(self.assignment(&inner.state, &lease))
    }

    /// Commit a participant's answer for their active lease.
    pub fn submit_trial(
        &self,
        session_id: &str,
        lease_id: &str,
        payload: Payload,
        elapsed_ms: u64,
    ) -> Result<Receipt, StoreError> {
        let mut inner = self.lock();
        let now = self.clock.now_ms();
        let session = inner
            .state
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(session_id.into()))?;
        let Some(lease) = inner
            .state
            .lease_by_id(lease_id)
            .filter(|l| l.session_id == session_id)
            .cloned()
        else {
            return Err(StoreError::UnknownLease(lease_id.into()));
        };
        if lease.expires_ms <= now {
            Self::commit(
                &mut inner,
                vec![StoreEvent::Session(SessionEvent::LeaseExpired {
                    lease_id: lease_id.into(),
                    at_ms: now,
                })],
            )?;
            return Err(StoreError::LeaseExpired);
        }
        if payload.kind() != lease.kind {
            return Err(StoreError::WrongPayloadType {
                expected: lease.kind,
                found: payload.kind(),
            });
        }
        let record = &inner.state.chains.records[&lease.chain_id];
        if let Payload::Grid(g) = &payload {
            if g.size() != record.config.grid_size {
                return Err(StoreError::BoardSize {
                    expected: record.config.grid_size,
                    found: g.size(),
                });
            }
        }
        let trial = TrialKind::for_step(record.mode, lease.kind);
        if trial == TrialKind::MemorizeReproduce {
            let waited = now - lease.issued_ms;
            if waited < self.policy.display_ms {
                return Err(StoreError::TooFast {
                    elapsed_ms: waited,
                    minimum_ms: self.policy.display_ms,
                });
            }
        }
        if let Payload::Description(text) = &payload {
            if let Err(source) = Description::new(text.as_str()).validate() {
                let event = if lease.retry_used {
                    SessionEvent::LeaseReleased {
                        lease_id: lease_id.into(),
                        reason: "validation".into(),
                    }
                } else {
                    SessionEvent::ValidationRejected {
                        lease_id: lease_id.into(),
                        message: source.to_string(),
                    }
                };
                Self::commit(&mut inner, vec![StoreEvent::Session(event)])?;
                return Err(StoreError::Validation {
                    source,
                    lease_retained: !lease.retry_used,
                });
            }
        }
        let step = ChainStep {
            index: lease.step_index,
            payload,
            producer: Producer {
                backend: PARTICIPANT_BACKEND.into(),
                id: session.participant_id.clone(),
            },
            timestamp_ms: now,
            elapsed_ms,
            attempts: 0,
        };
        Self::commit(
            &mut inner,
            vec![StoreEvent::Chain(ChainEvent::StepCommitted {
                chain_id: lease.chain_id.clone(),
                step,
            })],
        )?;
        let record = &inner.state.chains.records[&lease.chain_id];
        Ok(Receipt {
            chain_id: lease.chain_id.clone(),
            step_index: lease.step_index,
            trials_completed: inner.state.sessions[session_id].trials_completed,
            chain_complete: record.is_complete(),
        })
    }
}

pub fn read_store_events(path: &Path) -> Result<Vec<StoreEvent>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::Log(e.to_string())),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Log(format!("line {}: {e}", i + 1)))
        })
        .collect()
}
