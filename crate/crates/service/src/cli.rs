//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serial_repro_core::analysis::{analyze, EmbeddingProvider, OfflineFeaturizer, ReportOptions};
use serial_repro_core::bayes::{
    coarse_language_model, AbstractionModel, Inference, SimulatedBackend,
};
use serial_repro_core::chain::export::{export_chains, import_chains, ChainSet};
use serial_repro_core::chain::log::{write_log, ChainEvent, ChainStore, JsonlWriter};
use serial_repro_core::chain::{
    annotate_posthoc, batch_run, AgentBackend, ChainOptions, ChainRecord, IdentityBackend, Mode,
};
use serial_repro_core::complexity::{load_ctm_table, Boundary, Coverage, CtmTable, Scorer};
use serial_repro_core::Execution;
use serial_repro_llm::{ExchangeLog, LlmBackend, LlmClient, RemoteEmbeddingProvider, StubConfig};

use crate::api::{self, AppState};
use crate::config::Config;
use crate::store::{Store, SystemClock};

#[derive(Debug, Parser)]
#[command(
    name = "serial-repro",
    version,
    about = "Serial-reproduction chains: launch, serve, export and analyze"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Bayesian agents sampling from the posterior.
    Simulated,
    /// Bayesian agents taking the posterior mode.
    SimulatedMap,
    /// Perfect copying.
    Identity,
    /// Chat-completions model from the `[llm]` config section.
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedKind {
    None,
    Offline,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryKind {
    /// Maximal for full-coverage tables, recursive for square-only tables.
    Auto,
    Maximal,
    Ignore,
    Recursive,
}

#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "simulated")]
    pub backend: BackendKind,
    /// Abstraction model TOML for simulated backends.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Where LLM exchanges are appended; defaults to `<out>.llm.jsonl`.
    #[arg(long)]
    pub exchange_log: Option<PathBuf>,
    /// Run chains one at a time.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch of chains and write them to a chain log.
    LaunchBatch {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        grid_size: Option<usize>,
        /// Output chain log (JSONL).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Describe every board of complete unimodal chains and append the
    /// annotations to the log.
    Annotate {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Write a chain or service log as one directory per chain.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the metric tables for a log or an export directory.
    Analyze {
        /// Chain log, service log or export directory.
        #[arg(long)]
        input: PathBuf,
        /// CTM table; the built-in surrogate is used when absent.
        #[arg(long)]
        ctm: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "auto")]
        boundary: BoundaryKind,
        #[arg(long, value_enum, default_value = "offline")]
        embed: EmbedKind,
        /// Directory for report.txt, chains.csv and tests.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Run the participant HTTP service.
    Serve,
    /// Run the deterministic chat-completions stub.
    StubLlm {
        #[arg(long, default_value = "127.0.0.1:8089")]
        bind: String,
        #[arg(long, default_value_t = 0.02)]
        flip_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the built-in surrogate CTM table.
    CtmSurrogate {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

struct Backend {
    inner: Box<dyn AgentBackend>,
    grid_size: Option<usize>,
}

fn build_backend(args: &BackendArgs, cfg: &Config, out: &Path) -> Result<Backend> {
    let model = || -> Result<AbstractionModel> {
        match &args.model {
            Some(p) => {
                AbstractionModel::load(p).with_context(|| format!("loading model {}", p.display()))
            }
            None => Ok(coarse_language_model()),
        }
    };
    Ok(match args.backend {
        BackendKind::Simulated | BackendKind::SimulatedMap => {
            let inference = if args.backend == BackendKind::Simulated {
                Inference::Sample
            } else {
                Inference::Map
            };
            let m = model()?;
            let size = m.size();
            Backend {
                inner: Box::new(SimulatedBackend::new(m, inference)),
                grid_size: Some(size),
            }
        }
        BackendKind::Identity => Backend {
            inner: Box::new(IdentityBackend),
            grid_size: None,
        },
        BackendKind::Llm => {
            let path = args.exchange_log.clone().unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".llm.jsonl");
                PathBuf::from(p)
            });
            let log = ExchangeLog::to_file(&path)
                .with_context(|| format!("opening exchange log {}", path.display()))?;
            let client = LlmClient::new(cfg.llm.clone())?;
            Backend {
                inner: Box::new(LlmBackend::new(client, Arc::new(log))),
                grid_size: None,
            }
        }
    })
}

/// Chains and annotations from a log file or an export directory.
pub fn load_chains(input: &Path) -> Result<ChainSet> {
    if input.is_dir() {
        return import_chains(input).with_context(|| format!("importing {}", input.display()));
    }
    let store = ChainStore::load(input).with_context(|| format!("loading {}", input.display()))?;
    Ok((store.records.into_values().collect(), store.annotations))
}

fn ctm_table(path: Option<&Path>) -> Result<CtmTable> {
    match path {
        Some(p) => load_ctm_table(p).with_context(|| format!("loading CTM table {}", p.display())),
        None => Ok(CtmTable::surrogate()),
    }
}

fn boundary(kind: BoundaryKind, table: &CtmTable) -> Boundary {
    match kind {
        BoundaryKind::Auto if table.coverage() == Coverage::Full => Boundary::Maximal,
        BoundaryKind::Auto | BoundaryKind::Recursive => Boundary::Recursive { min_length: 2 },
        BoundaryKind::Maximal => Boundary::Maximal,
        BoundaryKind::Ignore => Boundary::Ignore,
    }
}

/// Report text and the two CSV tables for `input`.
pub fn analysis_outputs(
    input: &Path,
    ctm: Option<&Path>,
    boundary_kind: BoundaryKind,
    embed: EmbedKind,
    cfg: &Config,
    exec: Execution,
) -> Result<[(String, String); 3]> {
    let (records, annotations) = load_chains(input)?;
    let table = ctm_table(ctm)?;
    let scorer = Scorer::new(&table, boundary(boundary_kind, &table));
    let offline = OfflineFeaturizer::default();
    let remote;
    let embedder: Option<&dyn EmbeddingProvider> = match embed {
        EmbedKind::None => None,
        EmbedKind::Offline => Some(&offline),
        EmbedKind::Remote => {
            remote = RemoteEmbeddingProvider::new(cfg.embedding.clone())?;
            Some(&remote)
        }
    };
    let opts = ReportOptions {
        execution: exec,
        ridge: serial_repro_core::analysis::RidgeOptions {
            execution: exec,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = analyze(&records, &annotations, &scorer, embedder, &opts)?;
    Ok([
        ("report.txt".into(), report.to_text()),
        ("chains.csv".into(), report.chains_csv()),
        ("tests.csv".into(), report.tests_csv()),
    ])
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::LaunchBatch {
            mode,
            n,
            steps,
            seed,
            grid_size,
            out,
            backend,
        } => {
            let b = build_backend(&backend, &cfg, &out)?;
            let size = match (grid_size, b.grid_size) {
                (Some(g), Some(m)) if g != m => {
                    bail!("--grid-size {g} does not match the model's board size {m}")
                }
                (Some(g), _) => g,
                (None, Some(m)) => m,
                (None, None) => cfg.service.grid_size,
            };
            let opts = ChainOptions {
                steps,
                grid_size: size,
                execution: execution(backend.sequential),
                ..Default::default()
            };
            let result = batch_run(b.inner.as_ref(), n, mode, seed, &opts);
            write_log(&out, &result.records, &[])
                .with_context(|| format!("writing {}", out.display()))?;
            let failed: Vec<&str> = result.failures().map(|r| r.chain_id.as_str()).collect();
            println!(
                "{} chains written to {}, {} truncated",
                result.records.len(),
                out.display(),
                failed.len()
            );
            if !failed.is_empty() {
                bail!("truncated chains: {}", failed.join(", "));
            }
        }
        Command::Annotate { log, backend } => {
            let b = build_backend(&backend, &cfg, &log)?;
            let store =
                ChainStore::load(&log).with_context(|| format!("loading {}", log.display()))?;
            let opts = ChainOptions {
                execution: execution(backend.sequential),
                ..Default::default()
            };
            let todo: Vec<&ChainRecord> = store
                .records
                .values()
                .filter(|r| {
                    r.mode == Mode::Unimodal
                        && r.is_complete()
                        && !store.annotations.contains_key(&r.chain_id)
                })
                .collect();
            let results = opts
                .execution
                .map(&todo, |r| annotate_posthoc(r, b.inner.as_ref(), &opts));
            let mut writer = JsonlWriter::open(&log)?;
            let mut failures = Vec::new();
            let mut written = 0;
            for (r, res) in todo.iter().zip(results) {
                match res {
                    Ok(notes) => {
                        for annotation in notes {
                            writer.append(&ChainEvent::AnnotationAdded { annotation })?;
                            written += 1;
                        }
                    }
                    Err(e) => failures.push(format!("{}: {e}", r.chain_id)),
                }
            }
            println!("{written} annotations appended to {}", log.display());
            if !failures.is_empty() {
                bail!("annotation failed for {}", failures.join("; "));
            }
        }
        Command::Export { log, out } => {
            let (records, annotations) = load_chains(&log)?;
            export_chains(&out, &records, &annotations)?;
            println!("{} chains exported to {}", records.len(), out.display());
        }
        Command::Analyze {
            input,
            ctm,
            boundary,
            embed,
            out,
            sequential,
        } => {
            let outputs = analysis_outputs(
                &input,
                ctm.as_deref(),
                boundary,
                embed,
                &cfg,
                execution(sequential),
            )?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    for (name, text) in outputs {
                        fs::write(dir.join(&name), text)?;
                    }
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout.write_all(outputs[0].1.as_bytes())?;
                }
            }
        }
        Command::Serve => {
            let sc = cfg.service.clone();
            let store = Store::open(&sc.log_path, SystemClock, sc.policy(), sc.seed)?;
            let app = AppState {
                store: Arc::new(store),
                grid_size: sc.grid_size,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&sc.bind).await?;
                tracing::info!(addr = %listener.local_addr()?, log = %sc.log_path.display(), "serving");
                axum::serve(listener, api::router(app, sc.static_dir))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
        Command::StubLlm {
            bind,
            flip_rate,
            seed,
        } => {
            let state = serial_repro_llm::stub::StubState::new(StubConfig {
                flip_rate,
                seed,
                ..Default::default()
            });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind).await?;
                println!("stub listening on http://{}/v1", listener.local_addr()?);
                serial_repro_llm::stub::serve(listener, state).await
            })?;
        }
        Command::CtmSurrogate { out } => {
            let file =
                fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            CtmTable::surrogate().write_to(std::io::BufWriter::new(file))?;
        }
    }
    Ok(())
}
