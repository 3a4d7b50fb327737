//! Shared randomized-interleaving driver for the service tests.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serial_repro_core::chain::{Mode, Payload, PayloadKind, PARTICIPANT_BACKEND};
use serial_repro_core::grid::random_grid;
use serial_repro_service::{BatchSpec, ManualClock, Policy, ServiceState, Store, StoreError};

const WORDS: [&str; 8] = [
    "red", "white", "tiles", "form", "a", "shape", "near", "corner",
];

pub fn answer(rng: &mut ChaCha8Rng, kind: PayloadKind) -> Payload {
    match kind {
        PayloadKind::Grid => Payload::Grid(random_grid(rng.random(), 7, 0.4)),
        PayloadKind::Description => {
            // Occasionally too short, to exercise the validation path.
            let n = if rng.random_bool(0.1) { 3 } else { 6 };
            let words: Vec<&str> = (0..n)
                .map(|i| WORDS[(i + rng.random_range(0..8)) % 8])
                .collect();
            Payload::Description(format!("{} {}", words.join(" "), rng.random::<u16>()))
        }
    }
}

/// Invariants every reachable state must satisfy.
pub fn check_invariants(state: &ServiceState, max_trials: usize) {
    let mut per_participant: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in state.chains.records.values() {
        r.validate()
            .unwrap_or_else(|e| panic!("{}: {e}", r.chain_id));
        for (i, s) in r.steps.iter().enumerate() {
            assert_eq!(s.index, i + 1, "{} has a gap", r.chain_id);
            assert_eq!(s.payload.kind(), r.mode.expected_kind(s.index));
            assert_eq!(s.producer.backend, PARTICIPANT_BACKEND);
            assert!(
                per_participant
                    .entry(&s.producer.id)
                    .or_default()
                    .insert(&r.chain_id),
                "{} visited {} twice",
                s.producer.id,
                r.chain_id
            );
        }
    }
    for s in state.sessions.values() {
        assert!(s.trials_completed <= max_trials);
        let committed = per_participant
            .get(s.participant_id.as_str())
            .map_or(0, |c| c.len());
        assert_eq!(committed, s.trials_completed, "{}", s.participant_id);
        assert!(committed <= s.visited.len());
    }
    let mut leased_sessions = BTreeSet::new();
    for (chain, lease) in &state.leases {
        assert_eq!(&lease.chain_id, chain);
        assert!(
            leased_sessions.insert(&lease.session_id),
            "two leases for one session"
        );
        assert_eq!(
            state.sessions[&lease.session_id].active.as_deref(),
            Some(lease.lease_id.as_str())
        );
        let (next, kind) = state.chains.records[chain]
            .frontier()
            .expect("leased chain is live");
        assert_eq!((next, kind), (lease.step_index, lease.kind));
    }
}

pub fn stress(seed: u64, participants: usize) -> (Arc<Store>, usize) {
    let clock = Arc::new(ManualClock::new(0));
    let policy = Policy {
        lease_ms: 60_000,
        ..Policy::default()
    };
    let store = Arc::new(Store::in_memory(clock.clone(), policy, seed));
    for mode in Mode::BOTH {
        store
            .launch_batch(BatchSpec {
                mode,
                n: 25,
                steps: 10,
                seed,
                grid_size: 7,
            })
            .unwrap();
    }
    let handles: Vec<_> = (0..participants)
        .map(|p| {
            let store = store.clone();
            let clock = clock.clone();
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((p as u64) << 16));
                let sess = store.open_session(&format!("p{p:03}")).unwrap();
                let mut commits = 0;
                for _ in 0..40 {
                    if rng.random_bool(0.3) {
                        thread::yield_now();
                    }
                    let a = match store.request_trial(&sess.session_id) {
                        Ok(a) => a,
                        Err(StoreError::SessionExhausted(_)) | Err(StoreError::NoEligibleChain) => {
                            break
                        }
                        Err(e) => panic!("request: {e}"),
                    };
                    if rng.random_bool(0.05) {
                        // Abandon the trial; the lease runs out on its own.
                        clock.advance(policy.lease_ms);
                        continue;
                    }
                    clock.advance(rng.random_range(0..2 * policy.display_ms));
                    let payload = if rng.random_bool(0.03) {
                        answer(&mut rng, PayloadKind::Grid)
                    } else {
                        answer(&mut rng, a.expected)
                    };
                    match store.submit_trial(&sess.session_id, &a.lease_id, payload, 1) {
                        Ok(r) => {
                            commits += 1;
                            assert_eq!(r.trials_completed, commits);
                        }
                        Err(
                            StoreError::TooFast { .. }
                            | StoreError::Validation { .. }
                            | StoreError::WrongPayloadType { .. }
                            | StoreError::LeaseExpired
                            | StoreError::UnknownLease(_),
                        ) => {}
                        Err(e) => panic!("submit: {e}"),
                    }
                }
                commits
            })
        })
        .collect();
    let commits = handles.into_iter().map(|h| h.join().unwrap()).sum();
    (store, commits)
}
