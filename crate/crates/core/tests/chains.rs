use std::collections::BTreeMap;

use serial_repro_core::bayes::{coarse_language_model, Inference, SimulatedBackend};
use serial_repro_core::chain::export::{export_chains, import_chains};
use serial_repro_core::chain::log::{write_log, ChainStore};
use serial_repro_core::chain::{
    annotate_posthoc, batch_run, ChainOptions, IdentityBackend, Mode, PayloadKind,
};
use serial_repro_core::Execution;

#[test]
fn batches_are_reproducible_across_execution_modes() {
    let backend = SimulatedBackend::new(coarse_language_model(), Inference::Sample);
    for mode in Mode::BOTH {
        let par = batch_run(&backend, 16, mode, 9, &ChainOptions::default());
        let seq = batch_run(
            &backend,
            16,
            mode,
            9,
            &ChainOptions {
                execution: Execution::Sequential,
                ..ChainOptions::default()
            },
        );
        assert_eq!(
            serde_json::to_string(&par.records).unwrap(),
            serde_json::to_string(&seq.records).unwrap()
        );
        for r in &par.records {
            assert!(r.is_complete());
            r.validate().unwrap();
            for (i, s) in r.steps.iter().enumerate() {
                assert_eq!(s.index, i + 1);
                assert_eq!(s.payload.kind(), mode.expected_kind(s.index));
            }
            let grids = r
                .steps
                .iter()
                .filter(|s| s.payload.kind() == PayloadKind::Grid)
                .count();
            assert_eq!(grids, 10);
        }
    }
}

#[test]
fn log_replay_and_export_round_trip() {
    let backend = IdentityBackend;
    let opts = ChainOptions::default();
    let mut records = batch_run(&backend, 4, Mode::Unimodal, 1, &opts).records;
    records.extend(batch_run(&backend, 4, Mode::Multimodal, 1, &opts).records);
    let notes = annotate_posthoc(&records[0], &backend, &opts).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("chains.jsonl");
    write_log(&log, &records, &notes).unwrap();
    let store = ChainStore::load(&log).unwrap();
    assert_eq!(store.records.len(), 8);
    for r in &records {
        assert_eq!(&store.records[&r.chain_id], r);
    }
    assert_eq!(store.annotations[&records[0].chain_id], notes);

    let mut by_chain = BTreeMap::new();
    by_chain.insert(records[0].chain_id.clone(), notes);
    export_chains(dir.path().join("export"), &records, &by_chain).unwrap();
    let (back, back_notes) = import_chains(dir.path().join("export")).unwrap();
    let mut sorted = records.clone();
    sorted.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
    assert_eq!(back.len(), sorted.len());
    for (a, b) in back.iter().zip(&sorted) {
        assert_eq!(a.chain_id, b.chain_id);
        assert_eq!(a.boards(), b.boards());
        assert_eq!(a.descriptions(), b.descriptions());
    }
    assert_eq!(back_notes.len(), 1);
}
