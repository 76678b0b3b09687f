//! A store directory: one of the three index kinds plus a manifest of the
//! ingested file versions, written with a roll-forward commit journal.
//!
//! Commit protocol, for every file `f` of the new state:
//!
//! 1. write `f.tmp` and fsync it;
//! 2. write the file list to `COMMIT.tmp`, fsync, rename to `COMMIT`
//!    (the commit point);
//! 3. rename each `f.tmp` over `f`;
//! 4. delete `COMMIT`.
//!
//! Opening a store first finishes any commit whose `COMMIT` file exists and
//! discards leftover `.tmp` files otherwise, so a crash at any point leaves
//! either the previous or the new state.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CorruptStore;
use crate::dense::{DenseError, DenseStore, Embedder, EmbedderSpec, HnswParams};
use crate::dual::{DualError, DualStore, FusedHit, FusionParams};
use crate::ingest::{ingest_folder, Chunk, ChunkSink, ChunkingParams, FileEntry, IngestError, IngestReport};
use crate::sparse::query::free_text_query;
use crate::sparse::{
    highlight, Bm25Params, Hit, HighlightOptions, QueryAst, ResultPage, SparseError, SparseIndex, MAX_PAGE_SIZE,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const JOURNAL: &str = "COMMIT";
const JOURNAL_TMP: &str = "COMMIT.tmp";
/// Cap on candidates gathered for semantic and hybrid result pages.
pub const MAX_RANKED_RESULTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Sparse,
    Dense,
    #[default]
    Dual,
}

impl std::str::FromStr for StoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(StoreKind::Sparse),
            "dense" => Ok(StoreKind::Dense),
            "dual" => Ok(StoreKind::Dual),
            other => Err(format!("unknown store kind '{other}' (expected sparse, dense or dual)")),
        }
    }
}

impl std::fmt::Display for StoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StoreKind::Sparse => "sparse",
            StoreKind::Dense => "dense",
            StoreKind::Dual => "dual",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Keyword,
    Semantic,
    Hybrid,
}

impl std::str::FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "keyword" => Ok(SearchMode::Keyword),
            "semantic" => Ok(SearchMode::Semantic),
            "hybrid" => Ok(SearchMode::Hybrid),
            other => Err(format!("unknown search mode '{other}' (expected keyword, semantic or hybrid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub store_kind: StoreKind,
    /// Unix seconds.
    pub created_at: u64,
    /// Sorted by `source_path`, unique.
    pub files: Vec<FileEntry>,
    pub embedder: Option<String>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Corrupt(#[from] CorruptStore),
    #[error("no store at {0}; run init first")]
    NotInitialized(String),
    #[error("a store already exists at {0}")]
    AlreadyExists(String),
    #[error("store holds {expected} embeddings but the configured embedder is {got}")]
    EmbedderMismatch { expected: String, got: String },
    #[error("{mode:?} search is not available on a {kind} store")]
    ModeUnsupported { mode: SearchMode, kind: StoreKind },
    #[error("commit aborted at step {0}")]
    CommitAborted(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Points in the commit protocol, reported to a commit hook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitStep {
    TempWritten(String),
    JournalWritten,
    Renamed(String),
    Finished,
}

impl std::fmt::Display for CommitStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommitStep::TempWritten(p) => write!(f, "temp-written:{p}"),
            CommitStep::JournalWritten => f.write_str("journal-written"),
            CommitStep::Renamed(p) => write!(f, "renamed:{p}"),
            CommitStep::Finished => f.write_str("finished"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreData {
    Sparse(SparseIndex),
    Dense(DenseStore),
    Dual(DualStore),
}

/// A chunk returned by retrieval, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieved {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Clone)]
pub struct Store {
    dir: PathBuf,
    data: StoreData,
    manifest: Manifest,
    embedder: Arc<dyn Embedder>,
    bm25: Bm25Params,
    highlight: HighlightOptions,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .field("kind", &self.manifest.store_kind)
            .field("files", &self.manifest.files.len())
            .finish_non_exhaustive()
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn tmp_path(dir: &Path, rel: &str) -> PathBuf {
    dir.join(format!("{rel}.tmp"))
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    // directory fsync makes renames durable; not all platforms allow it
    match File::open(dir) {
        Ok(f) => f.sync_all().or(Ok(())),
        Err(_) => Ok(()),
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

/// Completes or discards an interrupted commit in `dir`.
pub fn recover(dir: &Path) -> Result<(), StoreError> {
    let journal = dir.join(JOURNAL);
    if journal.exists() {
        let files: Vec<String> = serde_json::from_slice(&fs::read(&journal)?).map_err(|e| CorruptStore {
            file: JOURNAL.into(),
            offset: 0,
            message: e.to_string(),
        })?;
        for rel in &files {
            let tmp = tmp_path(dir, rel);
            if tmp.exists() {
                fs::rename(&tmp, dir.join(rel))?;
            }
        }
        sync_dir(dir)?;
        fs::remove_file(&journal)?;
        tracing::info!(dir = %dir.display(), files = files.len(), "completed interrupted commit");
    }
    for entry in walkdir::WalkDir::new(dir).into_iter().filter_map(Result::ok) {
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "tmp") {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

impl Store {
    /// Creates and commits an empty store. Fails if `dir` already holds one.
    pub fn create(
        dir: &Path,
        kind: StoreKind,
        embedder: Arc<dyn Embedder>,
        hnsw: HnswParams,
        fusion: FusionParams,
    ) -> Result<Self, StoreError> {
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::AlreadyExists(dir.display().to_string()));
        }
        fs::create_dir_all(dir)?;
        let dense = || DenseStore::new(embedder.spec(), hnsw.clone());
        let data = match kind {
            StoreKind::Sparse => StoreData::Sparse(SparseIndex::new()),
            StoreKind::Dense => StoreData::Dense(dense()?),
            StoreKind::Dual => StoreData::Dual(DualStore::new(SparseIndex::new(), dense()?, fusion)?),
        };
        let manifest = Manifest {
            format_version: 1,
            store_kind: kind,
            created_at: now_secs(),
            files: Vec::new(),
            embedder: (kind != StoreKind::Sparse).then(|| embedder.spec().fingerprint()),
        };
        let mut store = Store {
            dir: dir.to_path_buf(),
            data,
            manifest,
            embedder,
            bm25: Bm25Params::default(),
            highlight: HighlightOptions::default(),
        };
        store.commit()?;
        Ok(store)
    }

    pub fn open(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, StoreError> {
        if !dir.is_dir() {
            return Err(StoreError::NotInitialized(dir.display().to_string()));
        }
        recover(dir)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(StoreError::NotInitialized(dir.display().to_string()));
        }
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?).map_err(|e| CorruptStore {
            file: MANIFEST_FILE.into(),
            offset: 0,
            message: e.to_string(),
        })?;
        if manifest.format_version != 1 {
            return Err(CorruptStore {
                file: MANIFEST_FILE.into(),
                offset: 0,
                message: format!("unsupported format_version {}", manifest.format_version),
            }
            .into());
        }
        if let Some(expected) = &manifest.embedder {
            let got = embedder.spec().fingerprint();
            if &got != expected {
                return Err(StoreError::EmbedderMismatch {
                    expected: expected.clone(),
                    got,
                });
            }
        }
        let data = match manifest.store_kind {
            StoreKind::Sparse => StoreData::Sparse(SparseIndex::load(&dir.join("sparse"))?),
            StoreKind::Dense => StoreData::Dense(DenseStore::load(&dir.join("dense"))?),
            StoreKind::Dual => StoreData::Dual(DualStore::load(dir)?),
        };
        let store = Store {
            dir: dir.to_path_buf(),
            data,
            manifest,
            embedder,
            bm25: Bm25Params::default(),
            highlight: HighlightOptions::default(),
        };
        let listed: usize = store.manifest.files.iter().map(|f| f.chunk_count).sum();
        if listed != store.chunk_count() {
            return Err(CorruptStore {
                file: MANIFEST_FILE.into(),
                offset: 0,
                message: format!("manifest lists {listed} chunks, indexes hold {}", store.chunk_count()),
            }
            .into());
        }
        Ok(store)
    }

    pub fn open_or_create(
        dir: &Path,
        kind: StoreKind,
        embedder: Arc<dyn Embedder>,
        hnsw: HnswParams,
        fusion: FusionParams,
    ) -> Result<Self, StoreError> {
        if dir.join(MANIFEST_FILE).exists() || dir.join(JOURNAL).exists() {
            Self::open(dir, embedder)
        } else {
            Self::create(dir, kind, embedder, hnsw, fusion)
        }
    }

    pub fn with_bm25(mut self, bm25: Bm25Params) -> Self {
        self.bm25 = bm25;
        self
    }

    pub fn with_highlight(mut self, opts: HighlightOptions) -> Self {
        match &mut self.data {
            StoreData::Sparse(s) => s.set_highlight_options(opts.clone()),
            StoreData::Dual(d) => d.set_highlight_options(opts.clone()),
            StoreData::Dense(_) => {}
        }
        self.highlight = opts;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn kind(&self) -> StoreKind {
        self.manifest.store_kind
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn data(&self) -> &StoreData {
        &self.data
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn embedder_spec(&self) -> EmbedderSpec {
        self.embedder.spec()
    }

    pub fn chunk_count(&self) -> usize {
        match &self.data {
            StoreData::Sparse(s) => s.doc_count() as usize,
            StoreData::Dense(d) => d.live_count() + d.unembeddable_count(),
            StoreData::Dual(d) => d.sparse().doc_count() as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_count() == 0
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        match &self.data {
            StoreData::Sparse(s) => s.chunk(chunk_id),
            StoreData::Dense(d) => d.chunk(chunk_id),
            StoreData::Dual(d) => d.sparse().chunk(chunk_id),
        }
    }

    pub fn chunks_for_source(&self, source_path: &str) -> Vec<&Chunk> {
        let mut out: Vec<&Chunk> = match &self.data {
            StoreData::Sparse(s) => s.chunks().filter(|c| c.source_path == source_path).collect(),
            StoreData::Dense(d) => d.chunks().filter(|c| c.source_path == source_path).collect(),
            StoreData::Dual(d) => d.sparse().chunks().filter(|c| c.source_path == source_path).collect(),
        };
        out.sort_by_key(|c| c.seq);
        out
    }

    fn encode_files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = match &self.data {
            StoreData::Sparse(s) => s.encode_files().into_iter().map(|(n, b)| (format!("sparse/{n}"), b)).collect(),
            StoreData::Dense(d) => d.encode_files().into_iter().map(|(n, b)| (format!("dense/{n}"), b)).collect(),
            StoreData::Dual(d) => d.encode_files(),
        };
        files.push((
            MANIFEST_FILE.into(),
            serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes"),
        ));
        files
    }

    pub fn commit(&mut self) -> Result<(), StoreError> {
        self.commit_with_hook(&mut |_| Ok(()))
    }

    /// Commits, calling `hook` after each protocol step. A hook error stops
    /// the commit where it stands, as a crash would.
    pub fn commit_with_hook(
        &mut self,
        hook: &mut dyn FnMut(&CommitStep) -> Result<(), String>,
    ) -> Result<(), StoreError> {
        let mut step = |s: CommitStep| hook(&s).map_err(|_| StoreError::CommitAborted(s.to_string()));
        let files = self.encode_files();
        for (rel, bytes) in &files {
            write_synced(&tmp_path(&self.dir, rel), bytes)?;
            step(CommitStep::TempWritten(rel.clone()))?;
        }
        let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
        write_synced(&self.dir.join(JOURNAL_TMP), &serde_json::to_vec(&names).expect("names serialize"))?;
        fs::rename(self.dir.join(JOURNAL_TMP), self.dir.join(JOURNAL))?;
        sync_dir(&self.dir)?;
        step(CommitStep::JournalWritten)?;
        let mut dirs = HashSet::new();
        for (rel, _) in &files {
            let target = self.dir.join(rel);
            fs::rename(tmp_path(&self.dir, rel), &target)?;
            dirs.insert(target.parent().expect("target has parent").to_path_buf());
            step(CommitStep::Renamed(rel.clone()))?;
        }
        for d in &dirs {
            sync_dir(d)?;
        }
        fs::remove_file(self.dir.join(JOURNAL))?;
        step(CommitStep::Finished)?;
        Ok(())
    }

    /// Ingests `root` into this store and commits.
    pub fn ingest(&mut self, root: &Path, params: &ChunkingParams) -> Result<IngestReport, StoreError> {
        self.ingest_with_hook(root, params, &mut |_| Ok(()))
    }

    /// [`Store::ingest`] with a commit hook, as in [`Store::commit_with_hook`].
    pub fn ingest_with_hook(
        &mut self,
        root: &Path,
        params: &ChunkingParams,
        hook: &mut dyn FnMut(&CommitStep) -> Result<(), String>,
    ) -> Result<IngestReport, StoreError> {
        let report = ingest_folder(root, self, params)?;
        self.commit_with_hook(hook)?;
        Ok(report)
    }

    fn sparse_index(&self) -> Option<&SparseIndex> {
        match &self.data {
            StoreData::Sparse(s) => Some(s),
            StoreData::Dual(d) => Some(d.sparse()),
            StoreData::Dense(_) => None,
        }
    }

    fn snippet(&self, text: &str, ast: Option<&QueryAst>) -> String {
        let terms = ast.map(|a| a.scoring_terms().into_iter().collect()).unwrap_or_default();
        highlight(text, &terms, &self.highlight)
    }

    fn hit(&self, chunk: &Chunk, score: f64, ast: Option<&QueryAst>) -> Hit {
        Hit {
            chunk_id: chunk.chunk_id.clone(),
            score,
            snippet: self.snippet(&chunk.text, ast),
            source_path: chunk.source_path.clone(),
        }
    }

    /// One page of results. Keyword mode parses `query` with the boolean
    /// language; semantic and hybrid modes also embed the raw text.
    pub fn search(&self, query: &str, mode: SearchMode, page: usize, page_size: usize) -> Result<ResultPage, StoreError> {
        if page == 0 || !(1..=MAX_PAGE_SIZE).contains(&page_size) {
            return Err(SparseError::InvalidPaging(format!(
                "page must be >= 1 and page_size within 1..={MAX_PAGE_SIZE}"
            ))
            .into());
        }
        let unsupported = || StoreError::ModeUnsupported { mode, kind: self.kind() };
        let window = page.saturating_mul(page_size).min(MAX_RANKED_RESULTS);
        let paginate = |hits: Vec<Hit>, total_hits: usize| ResultPage {
            hits: hits.into_iter().skip((page - 1) * page_size).take(page_size).collect(),
            total_hits,
            page,
            page_size,
        };
        match (mode, &self.data) {
            (SearchMode::Keyword, _) => {
                let sparse = self.sparse_index().ok_or_else(unsupported)?;
                let ast = crate::sparse::parse_query(query).map_err(SparseError::from)?;
                Ok(sparse.search(&ast, page, page_size, &self.bm25)?)
            }
            (SearchMode::Semantic, StoreData::Sparse(s)) => {
                let ast = crate::sparse::parse_query(query).map_err(SparseError::from)?;
                let r = s.semantic_rerank(&ast, query, window.max(1), &self.bm25, self.embedder.as_ref())?;
                Ok(paginate(r.hits, r.total_hits))
            }
            (SearchMode::Semantic, StoreData::Dense(_) | StoreData::Dual(_)) => {
                if query.trim().is_empty() {
                    return Err(SparseError::EmptyQuery.into());
                }
                let dense = match &self.data {
                    StoreData::Dense(d) => d,
                    StoreData::Dual(d) => d.dense(),
                    StoreData::Sparse(_) => unreachable!(),
                };
                let ast = free_text_query(query);
                let found = dense.search_text(query, MAX_RANKED_RESULTS, self.embedder.as_ref())?;
                let total = found.len();
                let hits = found
                    .iter()
                    .take(window)
                    .map(|h| self.hit(dense.chunk(&h.chunk_id).expect("hit chunks exist"), h.similarity, ast.as_ref()))
                    .collect();
                Ok(paginate(hits, total))
            }
            (SearchMode::Hybrid, StoreData::Dual(d)) => {
                let fused = d.hybrid_search(query, MAX_RANKED_RESULTS, &self.bm25, self.embedder.as_ref())?;
                let ast = crate::sparse::parse_query(query).ok();
                let total = fused.len();
                let hits = fused
                    .iter()
                    .take(window)
                    .map(|f| self.hit(d.sparse().chunk(&f.chunk_id).expect("fused chunks exist"), f.fused_score, ast.as_ref()))
                    .collect();
                Ok(paginate(hits, total))
            }
            (SearchMode::Hybrid, _) => Err(unsupported()),
        }
    }

    /// Fused hits with per-side ranks (dual stores only).
    pub fn hybrid(&self, query: &str, k: usize) -> Result<Vec<FusedHit>, StoreError> {
        match &self.data {
            StoreData::Dual(d) => Ok(d.hybrid_search(query, k, &self.bm25, self.embedder.as_ref())?),
            _ => Err(StoreError::ModeUnsupported {
                mode: SearchMode::Hybrid,
                kind: self.kind(),
            }),
        }
    }

    /// Top `k` chunks for a natural-language question: hybrid on dual
    /// stores, otherwise the store's native ranking. Every word of the
    /// question is an optional keyword, so no query syntax applies.
    pub fn retrieve(&self, question: &str, k: usize) -> Result<Vec<Retrieved>, StoreError> {
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let ast = free_text_query(question);
        let out = match &self.data {
            StoreData::Sparse(s) => {
                let Some(ast) = ast else { return Ok(Vec::new()) };
                s.ranked(&ast, &self.bm25)?
                    .into_iter()
                    .take(k)
                    .map(|(r, score)| Retrieved {
                        chunk: s.stored(r).expect("ranked refs exist").chunk.clone(),
                        score,
                    })
                    .collect()
            }
            StoreData::Dense(d) => d
                .search_text(question, k, self.embedder.as_ref())?
                .into_iter()
                .map(|h| Retrieved {
                    chunk: d.chunk(&h.chunk_id).expect("hit chunks exist").clone(),
                    score: h.similarity,
                })
                .collect(),
            StoreData::Dual(d) => {
                let Some(ast) = ast else { return Ok(Vec::new()) };
                d.hybrid_search_ast(&ast, question, k, &self.bm25, self.embedder.as_ref())?
                    .into_iter()
                    .map(|f| Retrieved {
                        chunk: d.sparse().chunk(&f.chunk_id).expect("fused chunks exist").clone(),
                        score: f.fused_score,
                    })
                    .collect()
            }
        };
        Ok(out)
    }

    /// Snippet for `chunk` highlighting the terms of a free-text question.
    pub fn question_snippet(&self, text: &str, question: &str) -> String {
        self.snippet(text, free_text_query(question).as_ref())
    }

    fn delete_source_inner(&mut self, source_path: &str) -> Result<usize, StoreError> {
        let n = match &mut self.data {
            StoreData::Sparse(s) => s.delete_by_source(source_path)?,
            StoreData::Dense(d) => d.delete_by_source(source_path),
            StoreData::Dual(d) => d.delete_by_source(source_path)?,
        };
        self.manifest.files.retain(|f| f.source_path != source_path);
        Ok(n)
    }

    fn add_chunk_inner(&mut self, chunk: Chunk) -> Result<(), StoreError> {
        match &mut self.data {
            StoreData::Sparse(s) => {
                s.add_chunk(chunk)?;
            }
            StoreData::Dense(d) => d.add_chunk(chunk, self.embedder.as_ref())?,
            StoreData::Dual(d) => d.add_chunk(chunk, self.embedder.as_ref())?,
        }
        Ok(())
    }
}

impl ChunkSink for Store {
    type Error = StoreError;

    fn file_sha256(&self, source_path: &str) -> Option<String> {
        self.manifest
            .files
            .binary_search_by(|f| f.source_path.as_str().cmp(source_path))
            .ok()
            .map(|i| self.manifest.files[i].sha256.clone())
    }

    fn delete_source(&mut self, source_path: &str) -> Result<usize, StoreError> {
        self.delete_source_inner(source_path)
    }

    fn add_chunk(&mut self, chunk: Chunk) -> Result<(), StoreError> {
        self.add_chunk_inner(chunk)
    }

    fn record_file(&mut self, entry: FileEntry) {
        let files = &mut self.manifest.files;
        match files.binary_search_by(|f| f.source_path.cmp(&entry.source_path)) {
            Ok(i) => files[i] = entry,
            Err(i) => files.insert(i, entry),
        }
    }
}

/// Per-file chunk counts, for audits.
pub fn chunks_by_source<'a>(chunks: impl Iterator<Item = &'a Chunk>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in chunks {
        *out.entry(c.source_path.clone()).or_insert(0) += 1;
    }
    out
}
