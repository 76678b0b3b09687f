//! Command-line front end. Exit codes: 0 success, 1 user error, 2 internal
//! error. `--json` prints the same objects the service returns.
//!
//! `DOCSIFT_FAULT_COMMIT_STEP=N` makes `ingest` abort the process at the
//! N-th commit step (1-based), for crash testing.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use docsift::llm::ExtractionSchema;
use docsift::pipelines::{templates, RecordStatus, UnitKind};
use docsift::store::{SearchMode, Store, StoreKind};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use crate::app::{
    build_embedder, App, AskRequest, Example, ExtractRequest, PredictRequest, SearchRequest, SummarizeRequest,
    TrainRequest, WriterLock,
};
use crate::config::Config;
use crate::error::AppError;

pub const FAULT_ENV: &str = "DOCSIFT_FAULT_COMMIT_STEP";
pub const LOG_ENV: &str = "DOCSIFT_LOG";

#[derive(Debug, Parser)]
#[command(name = "docsift", version, about = "Offline document search, question answering and extraction")]
pub struct Cli {
    /// Configuration file; built-in defaults when absent.
    #[arg(long, global = true, env = "DOCSIFT_CONFIG")]
    config: Option<PathBuf>,
    /// Store directory, overriding the configuration.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Print the service's JSON objects instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty store.
    Init {
        #[arg(long)]
        kind: Option<StoreKind>,
    },
    /// Add new and changed files under a folder.
    Ingest { dir: PathBuf },
    /// Search the store.
    Search {
        query: String,
        #[arg(long, default_value = "keyword")]
        mode: SearchMode,
        #[arg(long, default_value_t = 1)]
        page: usize,
        #[arg(long, default_value_t = 10)]
        page_size: usize,
    },
    /// Answer a question from the store with numbered sources.
    Ask {
        question: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Extract schema fields from document units into CSV.
    Extract(ExtractArgs),
    /// Summarize a document, optionally around a concept.
    Summarize {
        /// A document held by the store.
        #[arg(long, conflicts_with = "text_file", required_unless_present = "text_file")]
        source: Option<String>,
        /// Any UTF-8 text file.
        #[arg(long)]
        text_file: Option<PathBuf>,
        #[arg(long)]
        concept: Option<String>,
    },
    /// Train or apply text classifiers.
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Run the HTTP service.
    Serve {
        /// Overrides server.port; 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Inspect configuration and prompt templates.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// JSON array of schema fields.
    #[arg(long)]
    schema: PathBuf,
    /// A document held by the store.
    #[arg(long, conflicts_with = "units_file", required_unless_present = "units_file")]
    source: Option<String>,
    /// JSON array of unit strings.
    #[arg(long)]
    units_file: Option<PathBuf>,
    #[arg(long, default_value = "paragraph")]
    unit: UnitKind,
    /// Template file with a single {unit} placeholder.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    /// CSV destination; under the store's exports directory by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ClassifyCommand {
    /// Train a model from a JSON array of {text, label}.
    Train {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify a text with a trained model.
    Predict {
        #[arg(long)]
        model: String,
        text: String,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigCommand {
    /// Print the effective configuration in file form.
    Print,
    /// Print the bundled prompt templates.
    PrintTemplates,
}

fn init_logging(default_level: &str) {
    let filter = EnvFilter::try_from_env(LOG_ENV).unwrap_or_else(|_| EnvFilter::new(default_level));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| AppError::invalid(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path).map_err(|e| AppError::invalid(format!("cannot read {}: {e}", path.display())))
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), AppError> {
    let mut out = std::io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, value).map_err(|e| AppError::internal(e.to_string()))?;
        writeln!(out)?;
    } else {
        human(&mut out)?;
    }
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args(argv: impl IntoIterator<Item = String>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" });
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.body.message);
            if let Some(detail) = &e.body.detail {
                eprintln!("detail: {detail}");
            }
            tracing::debug!(code = %e.body.code, "command failed");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<Config, AppError> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(dir) = &cli.store {
        config.store_dir = dir.clone();
    }
    Ok(config)
}

fn fault_hook() -> Result<Box<dyn FnMut(&docsift::store::CommitStep) -> Result<(), String>>, AppError> {
    let Ok(raw) = std::env::var(FAULT_ENV) else {
        return Ok(Box::new(|_| Ok(())));
    };
    let target: usize = raw
        .parse()
        .map_err(|_| AppError::invalid(format!("{FAULT_ENV} must be a positive integer")))?;
    let mut calls = 0;
    Ok(Box::new(move |step| {
        calls += 1;
        if calls == target {
            eprintln!("fault injection: aborting at commit step {calls} ({step})");
            std::process::abort();
        }
        Ok(())
    }))
}

fn run(cli: Cli) -> Result<(), AppError> {
    let config = effective_config(&cli)?;
    let json = cli.json;
    match cli.command {
        Command::Init { kind } => {
            let kind = kind.unwrap_or(config.store_kind);
            let _lock = WriterLock::acquire(&config.store_dir)?;
            let store = Store::create(
                &config.store_dir,
                kind,
                build_embedder(&config)?,
                config.hnsw.clone(),
                config.fusion.clone(),
            )?;
            emit(json, store.manifest(), |w| {
                writeln!(w, "initialized {kind} store at {}", config.store_dir.display())
            })
        }
        Command::Ingest { dir } => {
            let app = App::open(config, false)?;
            let mut hook = fault_hook()?;
            let report = app.ingest(&dir, &mut *hook)?;
            emit(json, &report, |w| {
                writeln!(
                    w,
                    "{} files seen, {} ingested, {} unchanged, {} chunks added",
                    report.files_seen, report.files_ingested, report.files_skipped_unchanged, report.chunks_added
                )?;
                for (path, err) in &report.errors {
                    writeln!(w, "skipped {path}: {err}")?;
                }
                Ok(())
            })
        }
        Command::Search {
            query,
            mode,
            page,
            page_size,
        } => {
            let app = App::open(config, false)?;
            let result = app.search(&SearchRequest {
                q: query,
                page,
                page_size,
                mode,
            })?;
            emit(json, &result, |w| {
                writeln!(w, "{} hits, page {}", result.total_hits, result.page)?;
                for (i, h) in result.hits.iter().enumerate() {
                    let rank = (result.page - 1) * result.page_size + i + 1;
                    writeln!(w, "{rank:>4}. {:.4}  {}", h.score, h.source_path)?;
                    writeln!(w, "      {}", h.snippet.replace('\n', " "))?;
                }
                Ok(())
            })
        }
        Command::Ask { question, k } => {
            let app = App::open(config, false)?;
            let answer = app.ask(&AskRequest { question, k })?;
            emit(json, &answer, |w| {
                writeln!(w, "{}", answer.answer_text)?;
                if !answer.sources.is_empty() {
                    writeln!(w, "\nSources:")?;
                    for (i, s) in answer.sources.iter().enumerate() {
                        writeln!(w, "[{}] {}", i + 1, s.source_path)?;
                    }
                }
                Ok(())
            })
        }
        Command::Extract(args) => {
            let app = App::open(config, false)?;
            let schema: ExtractionSchema = read_json(&args.schema)?;
            let units = args.units_file.as_deref().map(read_json::<Vec<String>>).transpose()?;
            let template = args.template.as_deref().map(read_text).transpose()?;
            let req = ExtractRequest {
                units,
                source_path: args.source,
                unit: args.unit,
                template,
                schema,
                max_retries: args.max_retries,
            };
            let resp = app.extract(&req, args.out.as_deref())?;
            emit(json, &resp, |w| {
                let ok = resp.records.iter().filter(|r| r.status == RecordStatus::Ok).count();
                writeln!(
                    w,
                    "{ok} ok, {} failed; CSV written to {}",
                    resp.records.len() - ok,
                    resp.csv_path
                )
            })
        }
        Command::Summarize {
            source,
            text_file,
            concept,
        } => {
            let app = App::open(config, false)?;
            let text = text_file.as_deref().map(read_text).transpose()?;
            let summary = app.summarize(&SummarizeRequest {
                source_path: source,
                text,
                strategy: None,
                concept,
            })?;
            emit(json, &summary, |w| writeln!(w, "{}", summary.text))
        }
        Command::Classify(ClassifyCommand::Train {
            kind,
            data,
            epochs,
            learning_rate,
            seed,
        }) => {
            let app = App::open(config, false)?;
            let examples: Vec<Example> = read_json(&data)?;
            let resp = app.train(&TrainRequest {
                kind,
                examples: Some(examples),
                dataset: None,
                epochs,
                learning_rate,
                seed,
            })?;
            emit(json, &resp, |w| writeln!(w, "{}", resp.model_id))
        }
        Command::Classify(ClassifyCommand::Predict { model, text }) => {
            let app = App::open(config, false)?;
            let resp = app.predict(&PredictRequest { model_id: model, text })?;
            emit(json, &resp, |w| {
                writeln!(w, "{}", resp.prediction.label)?;
                for s in &resp.prediction.scores {
                    writeln!(w, "  {:<20} {:.6}", s.label, s.score)?;
                }
                Ok(())
            })
        }
        Command::Serve { port } => {
            let mut config = config;
            if let Some(p) = port {
                config.server.port = p;
            }
            serve(config)
        }
        Command::Config(ConfigCommand::Print) => {
            if json {
                emit(true, &config.redacted(), |_| Ok(()))
            } else {
                print!("{}", config.to_file_string());
                Ok(())
            }
        }
        Command::Config(ConfigCommand::PrintTemplates) => {
            let all: Vec<_> = templates::ALL
                .iter()
                .map(|(name, text)| serde_json::json!({ "name": name, "text": text }))
                .collect();
            emit(json, &all, |w| {
                for (name, text) in templates::ALL {
                    writeln!(w, "==> {name} <==")?;
                    writeln!(w, "{}", text.trim_end())?;
                    writeln!(w)?;
                }
                Ok(())
            })
        }
    }
}

fn serve(config: Config) -> Result<(), AppError> {
    let addr = std::net::SocketAddr::new(config.server.bind_addr, config.server.port);
    let app = Arc::new(App::open(config, true)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| AppError::invalid(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        tracing::info!(addr = %local, "service started");
        crate::service::serve(app, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
