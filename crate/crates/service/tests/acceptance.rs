//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p serial-repro-service --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::Parser;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serial_repro_core::analysis::{
    check_leakage, mean_board_complexity, pooled_t_test, ridge_decode, two_way_anova, FoldPlan,
    RidgeOptions,
};
use serial_repro_core::bayes::{
    coarse_language_model, multimodal_transition, prior_predictive, sample_chain_histogram,
    stationary_distribution, tv_distance, unimodal_transition, AbstractionModel, Inference,
    PriorKind, RandomModelSpec, SimulatedBackend,
};
use serial_repro_core::chain::log::ChainStore;
use serial_repro_core::chain::{batch_run, ChainOptions, Mode};
use serial_repro_core::complexity::{load_ctm_table, Boundary, CtmTable, Measure, Scorer};
use serial_repro_core::grid::{parse_grid, random_grid, Grid};
use serial_repro_core::Execution;
use serial_repro_llm::{parse_matrix_sized, prompts, StubConfig, StubServer};
use serial_repro_service::cli::{run, Cli};
use serial_repro_service::{BatchSpec, ManualClock, Policy, ServiceState, Store};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn random_model(
    seed: u64,
    size: usize,
    k: usize,
    v: usize,
    eps: f64,
    aligned: bool,
) -> AbstractionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RandomModelSpec {
        size,
        n_abstractions: k,
        n_descriptions: v,
        flip_rate: eps,
        aligned,
    }
    .generate(&mut rng)
}

fn stationary_pair(m: &AbstractionModel) -> Result<(f64, f64), String> {
    let uni = stationary_distribution(&unimodal_transition(m).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let multi = stationary_distribution(&multimodal_transition(m).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let prior = prior_predictive(m, PriorKind::Stimulus).map_err(|e| e.to_string())?;
    let tv = tv_distance(&uni, &multi).map_err(|e| e.to_string())?;
    let tv_prior = tv_distance(&uni, &prior).map_err(|e| e.to_string())?;
    Ok((tv, tv_prior))
}

fn aligned_stationarity() -> Outcome {
    let epsilons = [0.05, 0.1, 0.2];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..24u64 {
        let size = if i % 2 == 0 { 2 } else { 3 };
        let k = 2 + (i as usize * 5) % 7;
        let v = 2 + (i as usize * 3) % 7;
        let m = random_model(1000 + i, size, k, v, epsilons[i as usize % 3], true);
        let (tv, tv_prior) = stationary_pair(&m)?;
        ensure(
            tv < 1e-9 && tv_prior < 1e-9,
            format!("model {i} (N={size} K={k} V={v}): TV {tv:.2e}, prior TV {tv_prior:.2e}"),
        )?;
        worst = worst.max(tv).max(tv_prior);
        count += 1;
    }
    Ok(format!("{count} aligned models, max TV {worst:.1e} < 1e-9"))
}

/// Stimulus prior spread out, language prior concentrated on one abstraction.
fn witness(seed: u64, size: usize, eps: f64) -> AbstractionModel {
    let base = random_model(seed, size, 4, 4, eps, true);
    let language = vec![0.85, 0.05, 0.05, 0.05];
    let stimulus = vec![0.1, 0.3, 0.3, 0.3];
    let likelihood: Vec<Vec<f64>> = (0..4)
        .map(|mu| (0..4).map(|l| if l == mu { 0.85 } else { 0.05 }).collect())
        .collect();
    AbstractionModel::new(
        base.templates().to_vec(),
        stimulus,
        language,
        eps,
        base.vocabulary().to_vec(),
        likelihood,
    )
    .expect("valid witness model")
}

fn misalignment_witnesses() -> Outcome {
    let mut tvs = Vec::new();
    for (seed, size, eps) in [(1, 2, 0.05), (2, 3, 0.1), (3, 3, 0.2)] {
        let (tv, _) = stationary_pair(&witness(seed, size, eps))?;
        ensure(
            tv > 0.05,
            format!("witness N={size} eps={eps}: TV {tv:.4} <= 0.05"),
        )?;
        tvs.push(format!("{tv:.3}"));
    }
    Ok(format!("witness TVs {} > 0.05", tvs.join(", ")))
}

fn sampling_matches_exact() -> Outcome {
    let mut report = Vec::new();
    for (label, m) in [
        ("aligned", random_model(7, 2, 4, 3, 0.1, true)),
        ("misaligned", witness(1, 2, 0.1)),
    ] {
        for (mode, kernel) in [
            (
                Mode::Unimodal,
                unimodal_transition(&m).map_err(|e| e.to_string())?,
            ),
            (
                Mode::Multimodal,
                multimodal_transition(&m).map_err(|e| e.to_string())?,
            ),
        ] {
            let exact = stationary_distribution(&kernel).map_err(|e| e.to_string())?;
            let sampled =
                sample_chain_histogram(&m, mode, 100_000, 1_000, 42).map_err(|e| e.to_string())?;
            let tv = tv_distance(&exact, &sampled).map_err(|e| e.to_string())?;
            ensure(tv < 0.03, format!("{label} {mode}: TV {tv:.4}"))?;
            report.push(format!("{label}/{mode} {tv:.4}"));
        }
    }
    Ok(format!("1e5-step TVs {}", report.join(", ")))
}

fn complexity_correctness() -> Outcome {
    let surrogate = CtmTable::surrogate();
    let scorer = Scorer::new(&surrogate, Boundary::Maximal);
    let m = |g: &Grid, measure| scorer.measure(g, measure).map_err(|e| e.to_string());
    for g in [Grid::blank(7), Grid::filled(7)] {
        ensure(
            m(&g, Measure::Entropy)? == 0.0 && m(&g, Measure::Lsc)? == 0.0,
            "constant board scores nonzero",
        )?;
    }
    for phase in [false, true] {
        ensure(
            m(&Grid::checkerboard(7, phase), Measure::Lsc)? == 0.0,
            "checkerboard LSC nonzero",
        )?;
    }
    for seed in 0..1000 {
        let g = random_grid(seed, 7, 0.5);
        for measure in [Measure::Entropy, Measure::Lsc] {
            let base = m(&g, measure)?;
            for img in g.dihedral_images().iter().chain([&g.complement()]) {
                ensure(
                    (m(img, measure)? - base).abs() < 1e-12,
                    format!("board {seed} {measure:?} not invariant"),
                )?;
            }
        }
    }
    let table =
        load_ctm_table(repo().join("data/ctm/ctm-b2-d4x4.txt")).map_err(|e| e.to_string())?;
    let bdm = Scorer::new(&table, Boundary::Recursive { min_length: 2 });
    let fixture =
        std::fs::read_to_string(repo().join("crates/core/tests/fixtures/bdm_reference.txt"))
            .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for line in fixture
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
    {
        let (bits, value) = line.split_once(' ').ok_or("malformed fixture line")?;
        let want: f64 = value.parse().map_err(|_| "malformed fixture value")?;
        let g = Grid::from_tiles(bits.chars().map(|c| c == '1').collect())
            .map_err(|e| e.to_string())?;
        let got = bdm.measure(&g, Measure::Kc).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        n += 1;
    }
    ensure(
        n == 20 && worst < 1e-6,
        format!("{n} BDM boards, max deviation {worst:.2e}"),
    )?;
    Ok(format!(
        "zeros exact, invariance on 1000 boards, BDM max deviation {worst:.1e} on {n} boards"
    ))
}

fn direction_of_effect() -> Outcome {
    let start = Instant::now();
    let backend = SimulatedBackend::new(coarse_language_model(), Inference::Sample);
    let opts = ChainOptions::default();
    let uni = batch_run(&backend, 100, Mode::Unimodal, 2024, &opts);
    let multi = batch_run(&backend, 100, Mode::Multimodal, 2024, &opts);
    ensure(
        uni.failures().count() + multi.failures().count() == 0,
        "truncated chains",
    )?;
    ensure(
        uni.records
            .iter()
            .zip(&multi.records)
            .all(|(a, b)| a.seed_grid == b.seed_grid),
        "seeds differ between modes",
    )?;
    let table = CtmTable::surrogate();
    let scorer = Scorer::new(&table, Boundary::Maximal);
    let mut parts = Vec::new();
    for measure in [Measure::Lsc, Measure::Entropy] {
        let means = |records| -> Result<Vec<f64>, String> {
            Ok(
                mean_board_complexity(records, measure, &scorer, false, Execution::Parallel)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|c| c.mean)
                    .collect(),
            )
        };
        let t = pooled_t_test(&means(&uni.records)?, &means(&multi.records)?)
            .map_err(|e| e.to_string())?;
        ensure(
            t.df == 198 && t.t > 0.0 && t.p < 0.01,
            format!("{measure:?}: t({}) = {:.2}, p = {:.2e}", t.df, t.t, t.p),
        )?;
        parts.push(format!("{measure:?} t(198) = {:.2}, p = {:.1e}", t.t, t.p));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("{} in {secs:.1} s", parts.join("; ")))
}

fn statistics() -> Outcome {
    let v = [2.0, 4.0, 6.0, 8.0, 3.0, 5.0, 11.0, 13.0];
    let r = two_way_anova(
        &v,
        &[0, 0, 0, 0, 1, 1, 1, 1],
        &["x", "x", "y", "y", "x", "x", "y", "y"],
    )
    .map_err(|e| e.to_string())?;
    let got = [
        r.factor_a.ss,
        r.factor_b.ss,
        r.interaction.ss,
        r.residual_ss,
        r.factor_a.f,
        r.factor_b.f,
        r.interaction.f,
    ];
    let want = [18.0, 72.0, 8.0, 8.0, 9.0, 36.0, 4.0];
    ensure(
        got.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-9),
        format!("ANOVA fixture {got:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..50 {
        let n = rng.random_range(2..20);
        let (mut v, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..2 {
            for j in 0..2 {
                for _ in 0..n {
                    v.push(rng.random_range(-5.0..5.0) + (i * j) as f64);
                    a.push(i);
                    b.push(j);
                }
            }
        }
        let r = two_way_anova(&v, &a, &b).map_err(|e| e.to_string())?;
        let sum = r.factor_a.ss + r.factor_b.ss + r.interaction.ss + r.residual_ss;
        ensure(
            (sum - r.total_ss).abs() < 1e-9,
            format!("SS identity fails on trial {trial}"),
        )?;
    }
    let t = pooled_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0])
        .map_err(|e| e.to_string())?;
    ensure(
        (t.t + 1.0).abs() < 1e-12 && t.df == 8,
        format!("t fixture t = {}, df = {}", t.t, t.df),
    )?;
    let a: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let big = pooled_t_test(&a, &b).map_err(|e| e.to_string())?;
    ensure(big.df == 198, format!("100 vs 100 gives df {}", big.df))?;
    Ok("2x2 fixture to 1e-9, SS identity on 50 random designs, t = -1 on df 8, df 198".into())
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn ridge_sanity() -> Outcome {
    let opts = RidgeOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, p) = (200, 20);
    let groups: Vec<usize> = (0..n).map(|i| i / 5).collect();
    let x = gaussian(&mut rng, n, p);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum())
        .collect();
    let clean = ridge_decode(&x, &y, &groups, &opts).map_err(|e| e.to_string())?;
    ensure(
        clean.mean_r2 > 0.999,
        format!("noiseless R2 {:.5}", clean.mean_r2),
    )?;

    let mut shuffled = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = gaussian(&mut rng, n, 50);
        let mut y: Vec<f64> = x.iter().map(|r| r[0] + 0.5 * r[1]).collect();
        y.shuffle(&mut rng);
        let r = ridge_decode(
            &x,
            &y,
            &groups,
            &RidgeOptions {
                seed,
                ..opts.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        shuffled.push(r.mean_r2);
    }
    let mean_shuffled = shuffled.iter().sum::<f64>() / shuffled.len() as f64;
    ensure(
        mean_shuffled <= 0.05,
        format!("shuffled mean R2 {mean_shuffled:.4}"),
    )?;

    let all: Vec<usize> = (0..n).collect();
    let plan =
        FoldPlan::new(&all, &groups, opts.outer_folds, opts.seed).map_err(|e| e.to_string())?;
    for f in 0..plan.folds.len() {
        let (train, test) = plan.split(f);
        let leaks = check_leakage(&x, &train, &test);
        ensure(
            leaks.is_empty(),
            format!("fold {f} leaks {} rows", leaks.len()),
        )?;
        ensure(
            test.iter()
                .all(|i| !train.iter().any(|j| groups[*j] == groups[*i])),
            format!("fold {f} splits a group"),
        )?;
    }
    Ok(format!(
        "noiseless R2 {:.6}, shuffled mean R2 {mean_shuffled:.4} over 20 seeds, no leakage in {} folds",
        clean.mean_r2,
        plan.folds.len()
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["serial-repro"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).map_err(|e| e.to_string())?).map_err(|e| format!("{e:#}"))
}

fn corpus_failures() -> Result<usize, String> {
    let text = std::fs::read_to_string(repo().join("crates/llm/tests/fixtures/reply_corpus.txt"))
        .map_err(|e| e.to_string())?;
    let mut n = 0;
    for block in text.split("\n=== ").skip(1) {
        let (name, rest) = block.split_once('\n').ok_or("bad corpus block")?;
        let (header, reply) = rest.split_once("---\n").ok_or("bad corpus block")?;
        let expect = header
            .trim()
            .strip_prefix("expect: ")
            .ok_or("bad corpus header")?;
        let got = parse_matrix_sized(reply.strip_suffix('\n').unwrap_or(reply), 7);
        let ok = match (expect, &got) {
            ("error", Err(_)) => true,
            ("error", Ok(_)) => false,
            (rows, Ok(g)) => parse_grid(&rows.replace('/', "\n")).map_err(|e| e.to_string())? == *g,
            (_, Err(_)) => false,
        };
        ensure(ok, format!("corpus case {name}: {got:?}"))?;
        n += 1;
    }
    Ok(n)
}

fn machine_path() -> Outcome {
    let golden = repo().join("crates/llm/tests/golden");
    let read = |f: &str| std::fs::read_to_string(golden.join(f)).map_err(|e| e.to_string());
    ensure(
        prompts::reproduce_prompt(7) == read("reproduce-7x7.txt")?,
        "reproduce prompt differs",
    )?;
    ensure(
        prompts::describe_prompt(7) == read("describe-7x7.txt")?,
        "describe prompt differs",
    )?;
    ensure(
        prompts::render_prompt(7, "a red cross centered on a white background")
            == read("render-7x7.txt")?,
        "render prompt differs",
    )?;
    let cases = corpus_failures()?;
    ensure(cases == 50, format!("corpus has {cases} cases"))?;

    let stub = StubServer::start(StubConfig::default()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.toml");
    std::fs::write(
        &config,
        format!(
            "[llm]\nendpoint = \"{}\"\nmodel = \"stub\"\ntoken_env = \"ACCEPTANCE_STUB_TOKEN\"\n",
            stub.url()
        ),
    )
    .map_err(|e| e.to_string())?;
    std::env::set_var("ACCEPTANCE_STUB_TOKEN", "stub-token");
    let mut logs = Vec::new();
    for (name, extra) in [("a", None), ("b", Some("--sequential"))] {
        let out = dir.path().join(format!("{name}.jsonl"));
        let mut args = vec![
            "--config",
            config.to_str().unwrap(),
            "launch-batch",
            "--mode",
            "multimodal",
        ];
        args.extend([
            "--n",
            "100",
            "--steps",
            "10",
            "--seed",
            "7",
            "--backend",
            "llm",
            "--out",
            out.to_str().unwrap(),
        ]);
        args.extend(extra);
        cli(&args)?;
        logs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(
        logs[0] == logs[1],
        "multimodal batch logs differ between runs",
    )?;
    let store = ChainStore::load(dir.path().join("a.jsonl")).map_err(|e| e.to_string())?;
    ensure(
        store.records.len() == 100,
        format!("{} records", store.records.len()),
    )?;
    ensure(
        store
            .records
            .values()
            .all(|r| r.is_complete() && r.steps.len() == 20),
        "incomplete multimodal chains",
    )?;
    Ok(format!(
        "100x10 multimodal stub batch byte-identical across runs ({} bytes), prompts match golden files, {cases}/50 corpus cases",
        logs[0].len()
    ))
}

fn service_safety() -> Outcome {
    let mut total = 0;
    for seed in 0..3 {
        let (store, commits) = common::stress(seed, 120);
        let state = store.snapshot();
        catch_unwind(AssertUnwindSafe(|| common::check_invariants(&state, 10)))
            .map_err(|_| format!("invariant violated for seed {seed}"))?;
        let replayed = ServiceState::replay(&store.events()).map_err(|e| e.to_string())?;
        ensure(replayed == state, format!("replay differs for seed {seed}"))?;
        total += commits;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("events.jsonl");
    let clock = Arc::new(ManualClock::new(0));
    let live = {
        let store =
            Store::open(&path, clock.clone(), Policy::default(), 1).map_err(|e| e.to_string())?;
        store
            .launch_batch(BatchSpec {
                mode: Mode::Unimodal,
                n: 3,
                steps: 10,
                seed: 1,
                grid_size: 7,
            })
            .map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in 0..4 {
            let s = store
                .open_session(&format!("p{p}"))
                .map_err(|e| e.to_string())?;
            let a = store
                .request_trial(&s.session_id)
                .map_err(|e| e.to_string())?;
            clock.advance(6000);
            let _ = store.submit_trial(
                &s.session_id,
                &a.lease_id,
                common::answer(&mut rng, a.expected),
                6000,
            );
        }
        store.snapshot()
    };
    let reopened = Store::open(&path, clock, Policy::default(), 1).map_err(|e| e.to_string())?;
    ensure(
        reopened.snapshot() == live,
        "file log replay differs from live state",
    )?;
    Ok(format!("3 x 120 concurrent participants, {total} commits, invariants hold, replay exact (memory and file)"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("aligned-prior stationarity", aligned_stationarity),
        ("misalignment sensitivity", misalignment_witnesses),
        ("sampling/exact agreement", sampling_matches_exact),
        ("complexity-measure correctness", complexity_correctness),
        ("direction of effect", direction_of_effect),
        ("statistics validation", statistics),
        ("ridge decoding sanity", ridge_sanity),
        ("machine-path reproducibility", machine_path),
        ("service safety", service_safety),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
