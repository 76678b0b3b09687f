//! Operations shared by the CLI and the service, with their wire types.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use docsift::dense::embed::{RemoteEmbedder, RemoteEmbedderConfig};
use docsift::dense::{Embedder, HashEmbedder};
use docsift::ingest::{load_document, normalize_text, sha256_hex, IngestReport};
use docsift::llm::{ExtractionSchema, HttpBackend, HttpBackendConfig, LlmBackend, PromptTemplate, StubBackend};
use docsift::pipelines::{
    self, model_id, train_fewshot, train_tfidf_linear, Answer, ExtractionRecord, LinearTextModel,
    MapReduceTemplates, Prediction, Strategy, SummarizeParams, Summary, Unit, UnitKind,
};
use docsift::sparse::ResultPage;
use docsift::store::{CommitStep, SearchMode, Store, StoreKind};
use serde::{Deserialize, Serialize};

use crate::config::{Config, EmbedderKind, LlmKind};
use crate::error::{AppError, Class};

pub const LOCK_FILE: &str = "LOCK";
pub const MODELS_DIR: &str = "models";
pub const EXPORTS_DIR: &str = "exports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub store_kind: StoreKind,
    pub chunk_count: usize,
    pub llm_backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub q: String,
    #[serde(default = "one")]
    pub page: usize,
    #[serde(default = "ten")]
    pub page_size: usize,
    #[serde(default)]
    pub mode: SearchMode,
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub k: Option<usize>,
}

pub const DEFAULT_ASK_K: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRequest {
    #[serde(default)]
    pub units: Option<Vec<String>>,
    #[serde(default)]
    pub source_path: Option<String>,
    #[serde(default = "paragraph")]
    pub unit: UnitKind,
    /// Prompt template with a single `{unit}` placeholder; the bundled one
    /// when absent.
    #[serde(default)]
    pub template: Option<String>,
    pub schema: ExtractionSchema,
    #[serde(default = "two")]
    pub max_retries: u32,
}

fn paragraph() -> UnitKind {
    UnitKind::Paragraph
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub records: Vec<ExtractionRecord>,
    pub csv_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeRequest {
    #[serde(default)]
    pub source_path: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    /// Defaults to concept_focused when `concept` is given, else map_reduce.
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub concept: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    /// `centroid_fewshot` or `tfidf_linear`.
    pub kind: String,
    #[serde(default)]
    pub examples: Option<Vec<Example>>,
    #[serde(default)]
    pub dataset: Option<Vec<Example>>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model_id: String,
    pub kind: String,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub model_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model_id: String,
    #[serde(flatten)]
    pub prediction: Prediction,
}

fn env_secret(var: &Option<String>) -> Option<String> {
    var.as_ref().and_then(|name| std::env::var(name).ok())
}

/// Builds the configured embedder.
pub fn build_embedder(config: &Config) -> Result<Arc<dyn Embedder>, AppError> {
    let e = &config.embedder;
    Ok(match e.kind {
        EmbedderKind::Hash => Arc::new(HashEmbedder::new(e.dim).map_err(|err| AppError::from(crate::config::ConfigError::InvalidValue {
            key: "embedder.dim".into(),
            message: err.to_string(),
        }))?),
        EmbedderKind::Remote => Arc::new(
            RemoteEmbedder::new(RemoteEmbedderConfig {
                endpoint: e.endpoint.clone().unwrap_or_default(),
                model: e.model.clone().unwrap_or_else(|| "default".into()),
                api_key: env_secret(&e.api_key_env),
                dim: e.dim,
                max_in_flight: config.server.max_in_flight,
                timeout: config.llm_timeout(),
            })
            .map_err(|err| AppError::invalid(err.to_string()))?,
        ),
    })
}

/// Builds the configured LLM backend; the stub echoes its prompt.
pub fn build_llm(config: &Config) -> Result<Arc<dyn LlmBackend>, AppError> {
    let l = &config.llm;
    Ok(match l.backend {
        LlmKind::Stub => Arc::new(StubBackend::echo()),
        LlmKind::Http => {
            let mut hc = HttpBackendConfig::new(
                l.endpoint.clone().unwrap_or_default(),
                l.model.clone().unwrap_or_else(|| "default".into()),
            );
            hc.api_key = env_secret(&l.api_key_env);
            hc.timeout = config.llm_timeout();
            hc.max_attempts = l.max_attempts;
            hc.max_in_flight = config.server.max_in_flight;
            Arc::new(HttpBackend::new(hc)?)
        }
    })
}

/// Exclusive writer lock on a store directory, released on drop.
pub struct WriterLock(#[allow(dead_code)] File);

impl WriterLock {
    pub fn acquire(store_dir: &Path) -> Result<WriterLock, AppError> {
        fs::create_dir_all(store_dir)?;
        let f = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(store_dir.join(LOCK_FILE))?;
        match f.try_lock() {
            Ok(()) => Ok(WriterLock(f)),
            Err(fs::TryLockError::WouldBlock) => Err(busy()),
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }
}

fn busy() -> AppError {
    AppError::new(Class::Conflict, "ingest_busy", "an ingest is already running on this store")
}

/// Clears the busy flag when dropped.
struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub type CommitHook<'a> = &'a mut dyn FnMut(&CommitStep) -> Result<(), String>;

pub struct App {
    pub config: Config,
    store: RwLock<Arc<Store>>,
    ingest_busy: AtomicBool,
    llm: Arc<dyn LlmBackend>,
    embedder: Arc<dyn Embedder>,
}

impl App {
    /// Opens the configured store, creating it first if `create` is set.
    pub fn open(config: Config, create: bool) -> Result<App, AppError> {
        let embedder = build_embedder(&config)?;
        let llm = build_llm(&config)?;
        App::with_backends(config, create, embedder, llm)
    }

    pub fn with_backends(
        config: Config,
        create: bool,
        embedder: Arc<dyn Embedder>,
        llm: Arc<dyn LlmBackend>,
    ) -> Result<App, AppError> {
        let dir = &config.store_dir;
        let store = if create {
            Store::open_or_create(
                dir,
                config.store_kind,
                embedder.clone(),
                config.hnsw.clone(),
                config.fusion.clone(),
            )?
        } else {
            Store::open(dir, embedder.clone())?
        }
        .with_bm25(config.bm25);
        Ok(App {
            config,
            store: RwLock::new(Arc::new(store)),
            ingest_busy: AtomicBool::new(false),
            llm,
            embedder,
        })
    }

    /// A snapshot of the current store; ingests swap in a new one.
    pub fn store(&self) -> Arc<Store> {
        self.store.read().expect("store lock").clone()
    }

    pub fn llm(&self) -> &Arc<dyn LlmBackend> {
        &self.llm
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn health(&self) -> Health {
        let store = self.store();
        Health {
            status: "ok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            store_kind: store.kind(),
            chunk_count: store.chunk_count(),
            llm_backend: self.llm.id(),
        }
    }

    /// True while an ingest holds the store.
    pub fn ingest_running(&self) -> bool {
        self.ingest_busy.load(Ordering::Acquire)
    }

    /// Ingests into a copy of the store, commits it, then publishes it.
    /// Readers keep the previous snapshot until the commit is durable. A
    /// second concurrent ingest fails with `ingest_busy`.
    pub fn ingest(&self, path: &Path, hook: CommitHook<'_>) -> Result<IngestReport, AppError> {
        if self
            .ingest_busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(busy());
        }
        let _guard = BusyGuard(&self.ingest_busy);
        let _lock = WriterLock::acquire(&self.config.store_dir)?;
        if !path.is_dir() {
            return Err(AppError::invalid(format!("{} is not a directory", path.display())));
        }
        let mut next = (*self.store()).clone();
        let report = next.ingest_with_hook(path, &self.config.chunking, hook)?;
        *self.store.write().expect("store lock") = Arc::new(next);
        Ok(report)
    }

    pub fn search(&self, req: &SearchRequest) -> Result<ResultPage, AppError> {
        Ok(self.store().search(&req.q, req.mode, req.page, req.page_size)?)
    }

    pub fn ask(&self, req: &AskRequest) -> Result<Answer, AppError> {
        let k = req.k.unwrap_or(DEFAULT_ASK_K);
        if k == 0 {
            return Err(AppError::invalid("k must be >= 1"));
        }
        let template = PromptTemplate::new(pipelines::templates::ASK).expect("bundled template parses");
        Ok(pipelines::ask(&req.question, &self.store(), self.llm.as_ref(), k, &template)?)
    }

    /// Normalized text of a document the store holds.
    pub fn source_text(&self, source_path: &str) -> Result<(String, String), AppError> {
        let canonical = fs::canonicalize(source_path)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| source_path.to_string());
        let store = self.store();
        if !store.manifest().files.iter().any(|f| f.source_path == canonical) {
            return Err(AppError::not_found(format!("{source_path} is not in the store")));
        }
        let doc = load_document(Path::new(&canonical)).map_err(|e| AppError::not_found(e.to_string()))?;
        Ok((canonical, normalize_text(&doc.raw_text)))
    }

    /// Runs extraction and writes the CSV to `out`, or under the store's
    /// exports directory when `out` is `None`.
    pub fn extract(&self, req: &ExtractRequest, out: Option<&Path>) -> Result<ExtractResponse, AppError> {
        let units: Vec<Unit> = match (&req.units, &req.source_path) {
            (Some(units), None) => units
                .iter()
                .enumerate()
                .map(|(i, t)| Unit {
                    source_path: String::new(),
                    unit_index: i,
                    unit_text: t.clone(),
                })
                .collect(),
            (None, Some(path)) => {
                let (canonical, text) = self.source_text(path)?;
                pipelines::split_units(&text, req.unit, &self.config.chunking)
                    .map_err(AppError::from)?
                    .into_iter()
                    .map(|(i, t)| Unit {
                        source_path: canonical.clone(),
                        unit_index: i,
                        unit_text: t,
                    })
                    .collect()
            }
            _ => return Err(AppError::invalid("give exactly one of units or source_path")),
        };
        let template = PromptTemplate::new(req.template.as_deref().unwrap_or(pipelines::templates::EXTRACT))
            .map_err(|e| AppError::invalid(e.to_string()))?;
        let records = pipelines::extract(&units, &template, &req.schema, self.llm.as_ref(), req.max_retries)?;
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let body = serde_json::to_vec(&records).expect("records serialize");
                let name = format!("extract-{}.csv", &sha256_hex(&body)[..16]);
                self.config.store_dir.join(EXPORTS_DIR).join(name)
            }
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        pipelines::export_csv(&records, &req.schema, &path)?;
        let csv_path = fs::canonicalize(&path).unwrap_or(path);
        Ok(ExtractResponse {
            records,
            csv_path: csv_path.to_string_lossy().into_owned(),
        })
    }

    pub fn summarize(&self, req: &SummarizeRequest) -> Result<Summary, AppError> {
        let text = match (&req.source_path, &req.text) {
            (Some(p), None) => self.source_text(p)?.1,
            (None, Some(t)) => t.clone(),
            _ => return Err(AppError::invalid("give exactly one of source_path or text")),
        };
        let params = SummarizeParams {
            chunking: self.config.chunking,
            ..SummarizeParams::default()
        };
        let strategy = req.strategy.unwrap_or(if req.concept.is_some() {
            Strategy::ConceptFocused
        } else {
            Strategy::MapReduce
        });
        Ok(match (strategy, &req.concept) {
            (Strategy::MapReduce, None) => {
                pipelines::summarize_map_reduce(&text, self.llm.as_ref(), &MapReduceTemplates::general(), &params)?
            }
            (Strategy::ConceptFocused, Some(concept)) => pipelines::summarize_concept(
                &text,
                concept,
                self.embedder.as_ref(),
                self.llm.as_ref(),
                &MapReduceTemplates::concept(),
                &params,
            )?,
            (Strategy::MapReduce, Some(_)) => return Err(AppError::invalid("map_reduce takes no concept")),
            (Strategy::ConceptFocused, None) => return Err(AppError::invalid("concept_focused needs a concept")),
        })
    }

    fn models_dir(&self) -> PathBuf {
        self.config.store_dir.join(MODELS_DIR)
    }

    pub fn train(&self, req: &TrainRequest) -> Result<TrainResponse, AppError> {
        let examples = match (&req.examples, &req.dataset) {
            (Some(e), None) | (None, Some(e)) => e,
            _ => return Err(AppError::invalid("give exactly one of examples or dataset")),
        };
        let pairs: Vec<(String, String)> = examples.iter().map(|e| (e.text.clone(), e.label.clone())).collect();
        let (model, embedder) = match req.kind.as_str() {
            "centroid_fewshot" => {
                if req.epochs.is_some() || req.learning_rate.is_some() || req.seed.is_some() {
                    return Err(AppError::invalid("centroid_fewshot takes no epochs, learning_rate or seed"));
                }
                let m = train_fewshot(&pairs, self.embedder.as_ref())?;
                (m, Some(self.embedder.spec().fingerprint()))
            }
            "tfidf_linear" => {
                let m = train_tfidf_linear(
                    &pairs,
                    req.epochs.unwrap_or(100),
                    req.learning_rate.unwrap_or(0.1),
                    req.seed.unwrap_or(42),
                )?;
                (m, None)
            }
            other => {
                return Err(AppError::invalid(format!(
                    "unknown model kind '{other}' (expected centroid_fewshot or tfidf_linear)"
                )))
            }
        };
        let id = model_id(model.kind(), &pairs, &model.training_meta, embedder.as_deref());
        let dir = self.models_dir();
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{id}.json.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&model).expect("model serializes"))?;
        fs::rename(&tmp, dir.join(format!("{id}.json")))?;
        Ok(TrainResponse {
            model_id: id,
            kind: model.kind().into(),
            classes: model.classes,
        })
    }

    pub fn load_model(&self, id: &str) -> Result<LinearTextModel, AppError> {
        let well_formed = id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        let path = self.models_dir().join(format!("{id}.json"));
        if !well_formed || !path.is_file() {
            return Err(AppError::not_found(format!("no model with id '{id}'")));
        }
        let model: LinearTextModel = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| AppError::new(Class::Internal, "model_corrupt", e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, AppError> {
        let model = self.load_model(&req.model_id)?;
        let prediction = model.predict(&req.text, Some(self.embedder.as_ref()))?;
        Ok(PredictResponse {
            model_id: req.model_id.clone(),
            prediction,
        })
    }
}
