//! Sparse and dense stores kept in lockstep, queried together and merged by
//! reciprocal rank fusion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CorruptStore;
use crate::dense::{DenseError, DenseStore, Embedder, EmbeddingVector};
use crate::ingest::Chunk;
use crate::sparse::{parse_query, Bm25Params, QueryAst, SparseError, SparseIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    #[default]
    Rrf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionParams {
    pub method: FusionMethod,
    pub rrf_k: u32,
    pub k_dense: usize,
    pub k_sparse: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            method: FusionMethod::Rrf,
            rrf_k: 60,
            k_dense: 50,
            k_sparse: 50,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.rrf_k < 1 {
            return Err("rrf_k must be at least 1".into());
        }
        if self.k_dense < 1 || self.k_sparse < 1 {
            return Err("k_dense and k_sparse must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DualError {
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error("rollback after a failed write also failed ({0}); store is inconsistent")]
    PartialWriteRollback(String),
    #[error("store was left inconsistent by an earlier failed rollback")]
    Inconsistent,
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Corrupt(#[from] CorruptStore),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedHit {
    pub chunk_id: String,
    pub source_path: String,
    pub fused_score: f64,
    /// 1-based rank on the keyword side, absent when not retrieved there.
    pub sparse_rank: Option<usize>,
    pub dense_rank: Option<usize>,
}

/// One fused entry before source metadata is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub chunk_id: String,
    pub score: f64,
    pub sparse_rank: Option<usize>,
    pub dense_rank: Option<usize>,
}

/// Merges two rankings (best first, no repeats within a list) by summing
/// `1/(rrf_k + rank)` over the lists each id appears in. Sorted by score
/// descending, then id ascending.
pub fn rrf_fuse(sparse: &[String], dense: &[String], rrf_k: u32) -> Vec<Fused> {
    let mut ranks: BTreeMap<&str, (Option<usize>, Option<usize>)> = BTreeMap::new();
    for (i, id) in sparse.iter().enumerate() {
        ranks.entry(id).or_default().0 = Some(i + 1);
    }
    for (i, id) in dense.iter().enumerate() {
        ranks.entry(id).or_default().1 = Some(i + 1);
    }
    let term = |rank: Option<usize>| rank.map_or(0.0, |r| 1.0 / (rrf_k as f64 + r as f64));
    let mut out: Vec<Fused> = ranks
        .into_iter()
        .map(|(id, (sparse_rank, dense_rank))| Fused {
            chunk_id: id.to_string(),
            // fixed summation order: equal rank pairs give bit-equal scores
            score: term(sparse_rank) + term(dense_rank),
            sparse_rank,
            dense_rank,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct DualMeta {
    format_version: u32,
    fusion: FusionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualStore {
    sparse: SparseIndex,
    dense: DenseStore,
    fusion: FusionParams,
    inconsistent: bool,
}

impl DualStore {
    pub fn new(sparse: SparseIndex, dense: DenseStore, fusion: FusionParams) -> Result<Self, DualError> {
        fusion.validate().map_err(DualError::InvalidParams)?;
        Ok(DualStore {
            sparse,
            dense,
            fusion,
            inconsistent: false,
        })
    }

    pub fn sparse(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn dense(&self) -> &DenseStore {
        &self.dense
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    pub fn set_highlight_options(&mut self, opts: crate::sparse::HighlightOptions) {
        self.sparse.set_highlight_options(opts);
    }

    pub fn is_inconsistent(&self) -> bool {
        self.inconsistent
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.sparse.contains(chunk_id)
    }

    pub fn add_chunk(&mut self, chunk: Chunk, embedder: &dyn Embedder) -> Result<(), DualError> {
        self.dense.check_embedder(embedder)?;
        let vector = embedder.embed(&chunk.text).map_err(DenseError::from)?;
        self.add_embedded(chunk, vector)
    }

    /// Adds to both sides or neither. The embedding is computed before any
    /// mutation so the only fallible steps are the two inserts.
    pub fn add_embedded(&mut self, chunk: Chunk, vector: EmbeddingVector) -> Result<(), DualError> {
        if self.inconsistent {
            return Err(DualError::Inconsistent);
        }
        if self.sparse.contains(&chunk.chunk_id) {
            return Err(SparseError::DuplicateChunk(chunk.chunk_id).into());
        }
        if self.dense.contains(&chunk.chunk_id) {
            return Err(DenseError::DuplicateChunk(chunk.chunk_id).into());
        }
        let chunk_id = chunk.chunk_id.clone();
        self.sparse.add_chunk(chunk.clone())?;
        if let Err(e) = self.dense.add_embedded(chunk, vector) {
            return match self.sparse.remove_chunk(&chunk_id) {
                Ok(true) => Err(e.into()),
                Ok(false) => {
                    self.inconsistent = true;
                    Err(DualError::PartialWriteRollback(format!("{chunk_id} vanished from the keyword side")))
                }
                Err(r) => {
                    self.inconsistent = true;
                    Err(DualError::PartialWriteRollback(r.to_string()))
                }
            };
        }
        Ok(())
    }

    pub fn remove_chunk(&mut self, chunk_id: &str) -> Result<bool, DualError> {
        let s = self.sparse.remove_chunk(chunk_id)?;
        let d = self.dense.remove_chunk(chunk_id);
        Ok(s || d)
    }

    pub fn delete_by_source(&mut self, source_path: &str) -> Result<usize, DualError> {
        let n = self.sparse.delete_by_source(source_path)?;
        self.dense.delete_by_source(source_path);
        Ok(n)
    }

    pub fn hybrid_search(
        &self,
        query_text: &str,
        k: usize,
        bm25: &Bm25Params,
        embedder: &dyn Embedder,
    ) -> Result<Vec<FusedHit>, DualError> {
        let ast = parse_query(query_text).map_err(SparseError::from)?;
        self.hybrid_search_ast(&ast, query_text, k, bm25, embedder)
    }

    /// Keyword side runs `ast` (filters apply there only); the dense side
    /// embeds `raw_text`. Both sides run concurrently.
    pub fn hybrid_search_ast(
        &self,
        ast: &QueryAst,
        raw_text: &str,
        k: usize,
        bm25: &Bm25Params,
        embedder: &dyn Embedder,
    ) -> Result<Vec<FusedHit>, DualError> {
        if raw_text.trim().is_empty() {
            return Err(SparseError::EmptyQuery.into());
        }
        let (sparse, dense) = std::thread::scope(|s| {
            let sparse = s.spawn(|| -> Result<Vec<String>, SparseError> {
                let ranked = self.sparse.ranked(ast, bm25)?;
                Ok(ranked
                    .into_iter()
                    .take(self.fusion.k_sparse)
                    .map(|(r, _)| self.sparse.stored(r).expect("ranked refs exist").chunk.chunk_id.clone())
                    .collect())
            });
            let dense = self
                .dense
                .search_text(raw_text, self.fusion.k_dense, embedder)
                .map(|hits| hits.into_iter().map(|h| h.chunk_id).collect::<Vec<_>>());
            (sparse.join().expect("keyword search panicked"), dense)
        });
        let (sparse, dense) = (sparse?, dense?);
        Ok(rrf_fuse(&sparse, &dense, self.fusion.rrf_k)
            .into_iter()
            .take(k)
            .map(|f| FusedHit {
                source_path: self
                    .sparse
                    .chunk(&f.chunk_id)
                    .map(|c| c.source_path.clone())
                    .unwrap_or_default(),
                chunk_id: f.chunk_id,
                fused_score: f.score,
                sparse_rank: f.sparse_rank,
                dense_rank: f.dense_rank,
            })
            .collect())
    }

    /// Relative path and contents of each persisted file.
    pub fn encode_files(&self) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<(String, Vec<u8>)> = Vec::new();
        out.extend(self.sparse.encode_files().into_iter().map(|(n, b)| (format!("sparse/{n}"), b)));
        out.extend(self.dense.encode_files().into_iter().map(|(n, b)| (format!("dense/{n}"), b)));
        let meta = DualMeta {
            format_version: 1,
            fusion: self.fusion.clone(),
        };
        out.push(("dual.json".into(), serde_json::to_vec_pretty(&meta).expect("dual meta serializes")));
        out
    }

    pub fn persist(&self, dir: &Path) -> Result<(), DualError> {
        for (name, bytes) in self.encode_files() {
            let path = dir.join(name);
            fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
            fs::write(path, bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DualError> {
        let meta: DualMeta = serde_json::from_slice(&fs::read(dir.join("dual.json"))?).map_err(|e| CorruptStore {
            file: "dual.json".into(),
            offset: 0,
            message: e.to_string(),
        })?;
        if meta.format_version != 1 {
            return Err(CorruptStore {
                file: "dual.json".into(),
                offset: 0,
                message: format!("unsupported format_version {}", meta.format_version),
            }
            .into());
        }
        let sparse = SparseIndex::load(&dir.join("sparse"))?;
        let dense = DenseStore::load(&dir.join("dense"))?;
        let parity = sparse.doc_count() as usize == dense.live_count() + dense.unembeddable_count();
        if !parity || sparse.chunks().any(|c| !dense.contains(&c.chunk_id)) {
            return Err(CorruptStore {
                file: "dual.json".into(),
                offset: 0,
                message: "keyword and vector sides hold different chunks".into(),
            }
            .into());
        }
        DualStore::new(sparse, dense, meta.fusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{EmbedderSpec, HashEmbedder, HnswParams};
    use crate::ingest::{chunk_id, sha256_hex};

    fn chunk(source: &str, seq: usize, text: &str) -> Chunk {
        let start = seq * 10_000;
        Chunk {
            chunk_id: chunk_id(source, start, start + text.chars().count().max(1)),
            source_path: source.into(),
            start_offset: start,
            end_offset: start + text.chars().count().max(1),
            text: text.into(),
            seq,
            doc_sha256: sha256_hex(source.as_bytes()),
        }
    }

    fn store() -> (DualStore, HashEmbedder) {
        let e = HashEmbedder::default();
        let dense = DenseStore::new(EmbedderSpec::Hash { dim: e.dim() }, HnswParams::default()).unwrap();
        (DualStore::new(SparseIndex::new(), dense, FusionParams::default()).unwrap(), e)
    }

    #[test]
    fn fusion_examples() {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let fused = rrf_fuse(&ids(&["a", "b"]), &ids(&["a", "c"]), 60);
        assert_eq!(fused[0].chunk_id, "a");
        assert!((fused[0].score - 2.0 / 61.0).abs() < 1e-15);
        assert!((fused[0].score - 0.032787).abs() < 1e-6);
        let b = fused.iter().find(|f| f.chunk_id == "b").unwrap();
        assert_eq!(b.score, 1.0 / 62.0);
        assert_eq!((b.sparse_rank, b.dense_rank), (Some(2), None));
        // b and c tie at 1/62; id order decides
        assert_eq!(fused[1].chunk_id, "b");
        assert_eq!(fused[2].chunk_id, "c");
    }

    #[test]
    fn one_chunk_is_found_on_both_sides() {
        let (mut s, e) = store();
        s.add_chunk(chunk("a.txt", 0, "hypersonic glide vehicles"), &e).unwrap();
        let hits = s.hybrid_search("hypersonic", 5, &Bm25Params::default(), &e).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].sparse_rank, Some(1));
        assert_eq!(hits[0].dense_rank, Some(1));
        assert_eq!(hits[0].source_path, "a.txt");
    }

    #[test]
    fn duplicate_leaves_both_sides_untouched() {
        let (mut s, e) = store();
        let c = chunk("a.txt", 0, "alpha");
        s.add_chunk(c.clone(), &e).unwrap();
        let before = s.clone();
        assert!(s.add_chunk(c, &e).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn failed_dense_insert_rolls_back_keyword_side() {
        let (mut s, _) = store();
        let before = s.clone();
        let err = s
            .add_embedded(chunk("a.txt", 0, "alpha"), EmbeddingVector(vec![1.0; 7]))
            .unwrap_err();
        assert!(matches!(err, DualError::Dense(DenseError::DimensionMismatch { .. })));
        assert_eq!(s.sparse().doc_count(), 0);
        assert_eq!(s.sparse().stats(), before.sparse().stats());
    }

    #[test]
    fn parity_and_deletes() {
        let (mut s, e) = store();
        for i in 0..100 {
            let text = if i % 10 == 0 { "   ".to_string() } else { format!("word{} shared", i % 7) };
            s.add_chunk(chunk(&format!("f{}.txt", i % 4), i, &text), &e).unwrap();
        }
        assert_eq!(s.sparse().doc_count() as usize, s.dense().live_count() + s.dense().unembeddable_count());
        assert_eq!(s.dense().unembeddable_count(), 10);
        s.delete_by_source("f1.txt").unwrap();
        let hits = s.hybrid_search("shared", 100, &Bm25Params::default(), &e).unwrap();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|h| h.source_path != "f1.txt"));
        assert_eq!(s.sparse().doc_count() as usize, s.dense().live_count() + s.dense().unembeddable_count());
    }

    #[test]
    fn filters_apply_to_keyword_side_only() {
        let (mut s, e) = store();
        s.add_chunk(chunk("/d/a.md", 0, "budget review"), &e).unwrap();
        s.add_chunk(chunk("/d/b.txt", 1, "budget review"), &e).unwrap();
        let hits = s.hybrid_search("budget ext:md", 10, &Bm25Params::default(), &e).unwrap();
        let a = hits.iter().find(|h| h.source_path == "/d/a.md").unwrap();
        let b = hits.iter().find(|h| h.source_path == "/d/b.txt").unwrap();
        assert_eq!(a.sparse_rank, Some(1));
        assert_eq!(b.sparse_rank, None);
        assert!(b.dense_rank.is_some());
        assert!(matches!(
            s.hybrid_search("  ", 10, &Bm25Params::default(), &e),
            Err(DualError::Sparse(_))
        ));
    }

    #[test]
    fn persist_round_trip() {
        let (mut s, e) = store();
        for i in 0..20 {
            s.add_chunk(chunk("x.txt", i, &format!("item{i} common")), &e).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        s.persist(dir.path()).unwrap();
        let back = DualStore::load(dir.path()).unwrap();
        let p = Bm25Params::default();
        assert_eq!(
            back.hybrid_search("item3 common", 10, &p, &e).unwrap(),
            s.hybrid_search("item3 common", 10, &p, &e).unwrap()
        );
    }
}
