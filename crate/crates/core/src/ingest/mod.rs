//! Document loading, text normalization, chunking, and folder ingestion.
//!
//! A folder walk produces [`Document`]s, which are normalized and cut into
//! overlapping [`Chunk`]s. Chunks are handed to a [`ChunkSink`], which is
//! any store that can also answer "have I already seen this file version?".

mod chunker;
mod html;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

pub use chunker::{chunk_text, ChunkingParams, Span};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unsupported document format: {0}")]
    UnsupportedFormat(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid chunking parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    PlainText,
    Markdown,
    Html,
}

impl DocumentFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "txt" => Some(Self::PlainText),
            "md" | "markdown" => Some(Self::Markdown),
            "html" | "htm" => Some(Self::Html),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub source_path: String,
    pub format: DocumentFormat,
    pub raw_text: String,
    pub mtime: i64,
    pub sha256: String,
}

/// A contiguous span of a document's normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub source_path: String,
    pub start_offset: usize,
    pub end_offset: usize,
    pub text: String,
    pub seq: usize,
    pub doc_sha256: String,
}

impl Chunk {
    /// Builds the chunk for `span` of `normalized`, deriving its id.
    pub fn from_span(source_path: &str, doc_sha256: &str, normalized: &str, span: &Span, seq: usize) -> Self {
        Chunk {
            chunk_id: chunk_id(source_path, span.start, span.end),
            source_path: source_path.to_string(),
            start_offset: span.start,
            end_offset: span.end,
            text: span.slice(normalized).to_string(),
            seq,
            doc_sha256: doc_sha256.to_string(),
        }
    }

    /// Lowercased file extension of the source path, empty when absent.
    pub fn ext(&self) -> String {
        Path::new(&self.source_path)
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default()
    }
}

pub fn chunk_id(source_path: &str, start: usize, end: usize) -> String {
    sha256_hex(format!("{source_path}:{start}:{end}").as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Builds every chunk of a document.
pub fn chunk_document(doc: &Document, params: &ChunkingParams) -> Result<Vec<Chunk>, IngestError> {
    let normalized = normalize_text(&doc.raw_text);
    let spans = chunk_text(&normalized, params)?;
    Ok(spans
        .iter()
        .enumerate()
        .map(|(seq, span)| Chunk::from_span(&doc.source_path, &doc.sha256, &normalized, span, seq))
        .collect())
}

pub fn load_document(path: &Path) -> Result<Document, IngestError> {
    let format = DocumentFormat::from_path(path)
        .ok_or_else(|| IngestError::UnsupportedFormat(path.display().to_string()))?;
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = fs::read(path).map_err(io_err)?;
    let mtime = fs::metadata(path)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    let decoded = String::from_utf8_lossy(&bytes);
    let raw_text = match format {
        DocumentFormat::Html => html::strip_tags(&decoded),
        DocumentFormat::PlainText | DocumentFormat::Markdown => decoded.into_owned(),
    };
    Ok(Document {
        source_path: path_to_string(path),
        format,
        raw_text,
        mtime,
        sha256: sha256_hex(&bytes),
    })
}

/// Canonical newline and whitespace cleanup. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(unified.len());
    let mut newline_run = 0usize;
    for (i, line) in unified.split('\n').enumerate() {
        if i > 0 {
            newline_run += 1;
            if newline_run <= 2 {
                out.push('\n');
            }
        }
        let line = line.trim_end();
        if !line.is_empty() {
            out.push_str(line);
            newline_run = 0;
        }
    }
    out.trim().to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files_seen: usize,
    pub files_ingested: usize,
    pub files_skipped_unchanged: usize,
    pub chunks_added: usize,
    pub errors: Vec<(String, String)>,
}

/// One file version as recorded in a store manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub source_path: String,
    pub sha256: String,
    pub mtime: i64,
    pub chunk_count: usize,
}

/// A store that accepts chunks and tracks which file versions it holds.
pub trait ChunkSink {
    type Error: std::fmt::Display;

    fn file_sha256(&self, source_path: &str) -> Option<String>;
    fn delete_source(&mut self, source_path: &str) -> Result<usize, Self::Error>;
    fn add_chunk(&mut self, chunk: Chunk) -> Result<(), Self::Error>;
    fn record_file(&mut self, entry: FileEntry);
}

/// Walks `root` in lexicographic order, feeding new or changed files to `sink`.
pub fn ingest_folder<S: ChunkSink + ?Sized>(
    root: &Path,
    sink: &mut S,
    params: &ChunkingParams,
) -> Result<IngestReport, IngestError> {
    params.validate()?;
    let root = root.canonicalize().map_err(|source| IngestError::Io {
        path: root.display().to_string(),
        source,
    })?;
    let mut report = IngestReport::default();
    let walker = WalkDir::new(&root).sort_by_file_name().follow_links(false);
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                report.files_seen += 1;
                let path = e.path().map(path_to_string).unwrap_or_default();
                report.errors.push((path, e.to_string()));
                continue;
            }
        };
        if !entry.file_type().is_file() || DocumentFormat::from_path(entry.path()).is_none() {
            continue;
        }
        report.files_seen += 1;
        let path: PathBuf = entry.into_path();
        match ingest_file(&path, sink, params) {
            Ok(Some(added)) => {
                report.files_ingested += 1;
                report.chunks_added += added;
            }
            Ok(None) => report.files_skipped_unchanged += 1,
            Err(msg) => report.errors.push((path_to_string(&path), msg)),
        }
    }
    Ok(report)
}

fn ingest_file<S: ChunkSink + ?Sized>(
    path: &Path,
    sink: &mut S,
    params: &ChunkingParams,
) -> Result<Option<usize>, String> {
    let doc = load_document(path).map_err(|e| e.to_string())?;
    if sink.file_sha256(&doc.source_path).as_deref() == Some(doc.sha256.as_str()) {
        return Ok(None);
    }
    sink.delete_source(&doc.source_path).map_err(|e| e.to_string())?;
    let chunks = chunk_document(&doc, params).map_err(|e| e.to_string())?;
    let count = chunks.len();
    for chunk in chunks {
        if let Err(e) = sink.add_chunk(chunk) {
            // leave no partial file behind
            let _ = sink.delete_source(&doc.source_path);
            return Err(e.to_string());
        }
    }
    sink.record_file(FileEntry {
        source_path: doc.source_path,
        sha256: doc.sha256,
        mtime: doc.mtime,
        chunk_count: count,
    });
    Ok(Some(count))
}

fn path_to_string(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}
