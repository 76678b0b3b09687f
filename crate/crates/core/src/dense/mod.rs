//! Embedding store backed by an HNSW graph.

pub mod embed;
pub mod hnsw;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CorruptStore;
use crate::ingest::Chunk;
pub use embed::{embed_hash, Embedder, EmbedderSpec, EmbedError, EmbeddingVector, HashEmbedder};
pub use hnsw::{HnswError, HnswIndex, HnswParams};

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("chunk {0} already present")]
    DuplicateChunk(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Hnsw(#[from] HnswError),
    #[error(transparent)]
    Corrupt(#[from] CorruptStore),
    #[error("embedder produces dimension {got}, store dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedder {got} does not match the store's embedder {expected}")]
    EmbedderMismatch { expected: String, got: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseHit {
    pub chunk_id: String,
    pub source_path: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IdEntry {
    id: u64,
    chunk: Chunk,
}

#[derive(Debug, Serialize, Deserialize)]
struct IdMapFile {
    next_id: u64,
    entries: Vec<IdEntry>,
    unembeddable: Vec<Chunk>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaEmbedder {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    endpoint: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    dim: usize,
    embedder: MetaEmbedder,
    rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseStore {
    spec: EmbedderSpec,
    index: HnswIndex,
    next_id: u64,
    /// internal id -> chunk, live entries only
    chunks: BTreeMap<u64, Chunk>,
    by_chunk_id: HashMap<String, u64>,
    /// chunks whose embedding was the zero vector, keyed by chunk id
    unembeddable: BTreeMap<String, Chunk>,
}

impl DenseStore {
    pub fn new(spec: EmbedderSpec, params: HnswParams) -> Result<Self, DenseError> {
        Ok(DenseStore {
            index: HnswIndex::new(spec.dim(), params)?,
            spec,
            next_id: 0,
            chunks: BTreeMap::new(),
            by_chunk_id: HashMap::new(),
            unembeddable: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn index(&self) -> &HnswIndex {
        &self.index
    }

    pub fn live_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn unembeddable_count(&self) -> usize {
        self.unembeddable.len()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.by_chunk_id.contains_key(chunk_id) || self.unembeddable.contains_key(chunk_id)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_chunk_id
            .get(chunk_id)
            .and_then(|id| self.chunks.get(id))
            .or_else(|| self.unembeddable.get(chunk_id))
    }

    /// Every chunk held, embedded or not.
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values().chain(self.unembeddable.values())
    }

    pub fn check_embedder(&self, embedder: &dyn Embedder) -> Result<(), DenseError> {
        let got = embedder.spec();
        if got.dim() != self.dim() {
            return Err(DenseError::DimensionMismatch {
                expected: self.dim(),
                got: got.dim(),
            });
        }
        if got != self.spec {
            return Err(DenseError::EmbedderMismatch {
                expected: self.spec.fingerprint(),
                got: got.fingerprint(),
            });
        }
        Ok(())
    }

    pub fn add_chunk(&mut self, chunk: Chunk, embedder: &dyn Embedder) -> Result<(), DenseError> {
        if self.contains(&chunk.chunk_id) {
            return Err(DenseError::DuplicateChunk(chunk.chunk_id));
        }
        self.check_embedder(embedder)?;
        let vector = embedder.embed(&chunk.text)?;
        self.add_embedded(chunk, vector)
    }

    /// Adds a chunk whose embedding was computed by the caller.
    pub fn add_embedded(&mut self, chunk: Chunk, vector: EmbeddingVector) -> Result<(), DenseError> {
        if self.contains(&chunk.chunk_id) {
            return Err(DenseError::DuplicateChunk(chunk.chunk_id));
        }
        if vector.dim() != self.dim() {
            return Err(DenseError::DimensionMismatch {
                expected: self.dim(),
                got: vector.dim(),
            });
        }
        if vector.is_zero() {
            tracing::info!(chunk_id = %chunk.chunk_id, source = %chunk.source_path, "chunk has no embeddable text; excluded from dense search");
            self.unembeddable.insert(chunk.chunk_id.clone(), chunk);
            return Ok(());
        }
        let id = self.next_id;
        self.index.insert(id, vector)?;
        self.next_id += 1;
        self.by_chunk_id.insert(chunk.chunk_id.clone(), id);
        self.chunks.insert(id, chunk);
        Ok(())
    }

    /// Removes a single chunk; returns whether it was present.
    pub fn remove_chunk(&mut self, chunk_id: &str) -> bool {
        if self.unembeddable.remove(chunk_id).is_some() {
            return true;
        }
        let Some(id) = self.by_chunk_id.remove(chunk_id) else { return false };
        self.chunks.remove(&id);
        self.index.delete(id);
        true
    }

    pub fn delete_by_source(&mut self, source_path: &str) -> usize {
        let ids: Vec<String> = self
            .chunks()
            .filter(|c| c.source_path == source_path)
            .map(|c| c.chunk_id.clone())
            .collect();
        for id in &ids {
            self.remove_chunk(id);
        }
        ids.len()
    }

    /// Nearest chunks to `query`. An empty store or a zero query yields no
    /// hits rather than an error.
    pub fn search(&self, query: &EmbeddingVector, k: usize, ef_search: usize) -> Result<Vec<DenseHit>, DenseError> {
        if query.is_zero() || self.index.live_count() == 0 {
            return Ok(Vec::new());
        }
        let hits = self.index.search(query, k, ef_search)?;
        Ok(hits
            .into_iter()
            .map(|(id, similarity)| {
                let chunk = &self.chunks[&id];
                DenseHit {
                    chunk_id: chunk.chunk_id.clone(),
                    source_path: chunk.source_path.clone(),
                    similarity,
                }
            })
            .collect())
    }

    pub fn search_text(&self, text: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<DenseHit>, DenseError> {
        self.check_embedder(embedder)?;
        let query = embedder.embed(text)?;
        self.search(&query, k, self.index.params().ef_search)
    }

    /// File name and contents of each persisted file.
    pub fn encode_files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let (vectors, graph) = self.index.encode();
        let idmap = IdMapFile {
            next_id: self.next_id,
            entries: self
                .chunks
                .iter()
                .map(|(&id, chunk)| IdEntry {
                    id,
                    chunk: chunk.clone(),
                })
                .collect(),
            unembeddable: self.unembeddable.values().cloned().collect(),
        };
        let embedder = match &self.spec {
            EmbedderSpec::Hash { .. } => MetaEmbedder {
                kind: "hash".into(),
                model: None,
                endpoint: None,
            },
            EmbedderSpec::Remote { model, endpoint, .. } => MetaEmbedder {
                kind: "remote".into(),
                model: Some(model.clone()),
                endpoint: Some(endpoint.clone()),
            },
        };
        let meta = MetaFile {
            format_version: 1,
            dim: self.dim(),
            embedder,
            rng_seed: self.index.params().rng_seed,
        };
        vec![
            ("vectors.dat", vectors),
            ("graph.dat", graph),
            ("idmap.json", serde_json::to_vec_pretty(&idmap).expect("idmap serializes")),
            ("meta.json", serde_json::to_vec_pretty(&meta).expect("meta serializes")),
        ]
    }

    /// Writes the store files into `dir` directly (no commit protocol; see
    /// the `store` module for crash-safe writes).
    pub fn persist(&self, dir: &Path) -> Result<(), DenseError> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.encode_files() {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DenseError> {
        let read = |name: &str| fs::read(dir.join(name));
        let meta_bytes = read("meta.json")?;
        let meta: MetaFile = serde_json::from_slice(&meta_bytes).map_err(|e| json_corrupt("meta.json", e))?;
        if meta.format_version != 1 {
            return Err(CorruptStore {
                file: "meta.json".into(),
                offset: 0,
                message: format!("unsupported format_version {}", meta.format_version),
            }
            .into());
        }
        let spec = match (meta.embedder.kind.as_str(), meta.embedder.model, meta.embedder.endpoint) {
            ("hash", _, _) => EmbedderSpec::Hash { dim: meta.dim },
            ("remote", Some(model), Some(endpoint)) => EmbedderSpec::Remote {
                dim: meta.dim,
                model,
                endpoint,
            },
            (kind, _, _) => {
                return Err(CorruptStore {
                    file: "meta.json".into(),
                    offset: 0,
                    message: format!("bad embedder description '{kind}'"),
                }
                .into())
            }
        };
        let index = HnswIndex::decode(&read("vectors.dat")?, &read("graph.dat")?)?;
        if index.dim() != meta.dim {
            return Err(CorruptStore {
                file: "vectors.dat".into(),
                offset: 8,
                message: format!("dimension {} differs from meta.json {}", index.dim(), meta.dim),
            }
            .into());
        }
        let idmap: IdMapFile =
            serde_json::from_slice(&read("idmap.json")?).map_err(|e| json_corrupt("idmap.json", e))?;
        let mut chunks = BTreeMap::new();
        let mut by_chunk_id = HashMap::new();
        for IdEntry { id, chunk } in idmap.entries {
            if !index.contains(id) {
                return Err(CorruptStore {
                    file: "idmap.json".into(),
                    offset: 0,
                    message: format!("id {id} has no live vector"),
                }
                .into());
            }
            by_chunk_id.insert(chunk.chunk_id.clone(), id);
            chunks.insert(id, chunk);
        }
        if chunks.len() != index.live_count() {
            return Err(CorruptStore {
                file: "idmap.json".into(),
                offset: 0,
                message: format!("{} entries for {} live vectors", chunks.len(), index.live_count()),
            }
            .into());
        }
        let unembeddable = idmap
            .unembeddable
            .into_iter()
            .map(|c| (c.chunk_id.clone(), c))
            .collect();
        Ok(DenseStore {
            spec,
            index,
            next_id: idmap.next_id,
            chunks,
            by_chunk_id,
            unembeddable,
        })
    }
}

fn json_corrupt(file: &str, e: serde_json::Error) -> CorruptStore {
    CorruptStore {
        file: file.into(),
        offset: 0,
        message: format!("invalid JSON at line {} column {}: {e}", e.line(), e.column()),
    }
}
