//! Keyword store: a positional inverted index ranked with BM25, queried
//! through a small boolean language.

pub mod analyzer;
pub mod bm25;
pub mod highlight;
pub mod query;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, CorruptStore};
use crate::dense::{EmbedError, Embedder};
use crate::ingest::Chunk;
pub use analyzer::{tokenize, Token};
pub use bm25::Bm25Params;
pub use highlight::{highlight, HighlightOptions};
pub use query::{parse_query, ParseError, QueryAst};

pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("chunk {0} already present")]
    DuplicateChunk(String),
    #[error("unknown chunk ref {0}")]
    UnknownChunk(u32),
    #[error("store is closed for writing")]
    StoreClosed,
    #[error("query has no terms")]
    EmptyQuery,
    #[error("query only excludes documents; add at least one positive term")]
    PureNegationQuery,
    #[error("invalid paging: {0}")]
    InvalidPaging(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Corrupt(#[from] CorruptStore),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub chunk_ref: u32,
    /// Token positions; term frequency is their count.
    pub positions: Vec<u32>,
}

impl Posting {
    pub fn tf(&self) -> u32 {
        self.positions.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredChunk {
    pub chunk_ref: u32,
    pub doc_len: u32,
    pub ext: String,
    #[serde(flatten)]
    pub chunk: Chunk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
    pub snippet: String,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultPage {
    pub hits: Vec<Hit>,
    pub total_hits: usize,
    pub page: usize,
    pub page_size: usize,
}

/// Corpus-level statistics, comparable across stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexStats {
    pub doc_count: u64,
    pub total_len: u64,
    /// term -> (document frequency, total term frequency)
    pub terms: BTreeMap<String, (u64, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseIndex {
    docs: BTreeMap<u32, StoredChunk>,
    by_chunk_id: HashMap<String, u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    total_len: u64,
    next_ref: u32,
    read_only: bool,
    highlight: HighlightOptions,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    doc_count: u64,
    total_len: u64,
    format_version: u32,
}

impl SparseIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects writes from now on.
    pub fn close_for_writing(&mut self) {
        self.read_only = true;
    }

    pub fn set_highlight_options(&mut self, opts: HighlightOptions) {
        self.highlight = opts;
    }

    pub fn doc_count(&self) -> u64 {
        self.docs.len() as u64
    }

    pub fn total_len(&self) -> u64 {
        self.total_len
    }

    pub fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    pub fn df(&self, term: &str) -> u64 {
        self.postings.get(term).map_or(0, |p| p.len() as u64)
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.by_chunk_id.contains_key(chunk_id)
    }

    pub fn chunk_ref(&self, chunk_id: &str) -> Option<u32> {
        self.by_chunk_id.get(chunk_id).copied()
    }

    pub fn stored(&self, chunk_ref: u32) -> Option<&StoredChunk> {
        self.docs.get(&chunk_ref)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_ref(chunk_id).and_then(|r| self.docs.get(&r)).map(|d| &d.chunk)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.docs.values().map(|d| &d.chunk)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            doc_count: self.doc_count(),
            total_len: self.total_len,
            terms: self
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), (ps.len() as u64, ps.iter().map(|p| p.tf() as u64).sum())))
                .collect(),
        }
    }

    pub fn add_chunk(&mut self, chunk: Chunk) -> Result<u32, SparseError> {
        if self.read_only {
            return Err(SparseError::StoreClosed);
        }
        if self.by_chunk_id.contains_key(&chunk.chunk_id) {
            return Err(SparseError::DuplicateChunk(chunk.chunk_id));
        }
        let chunk_ref = self.next_ref;
        self.next_ref += 1;
        let tokens = tokenize(&chunk.text);
        let mut positions: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for t in &tokens {
            positions.entry(t.term.clone()).or_default().push(t.position as u32);
        }
        for (term, positions) in positions {
            // refs only grow, so appending keeps lists sorted
            self.postings.entry(term).or_default().push(Posting { chunk_ref, positions });
        }
        self.total_len += tokens.len() as u64;
        self.by_chunk_id.insert(chunk.chunk_id.clone(), chunk_ref);
        let ext = chunk.ext();
        self.docs.insert(
            chunk_ref,
            StoredChunk {
                chunk_ref,
                doc_len: tokens.len() as u32,
                ext,
                chunk,
            },
        );
        Ok(chunk_ref)
    }

    /// Removes one chunk; returns whether it was present.
    pub fn remove_chunk(&mut self, chunk_id: &str) -> Result<bool, SparseError> {
        if self.read_only {
            return Err(SparseError::StoreClosed);
        }
        let Some(chunk_ref) = self.by_chunk_id.remove(chunk_id) else { return Ok(false) };
        let doc = self.docs.remove(&chunk_ref).expect("ref map and docs agree");
        let terms: BTreeSet<String> = tokenize(&doc.chunk.text).into_iter().map(|t| t.term).collect();
        for term in terms {
            if let Some(list) = self.postings.get_mut(&term) {
                if let Ok(i) = list.binary_search_by_key(&chunk_ref, |p| p.chunk_ref) {
                    list.remove(i);
                }
                if list.is_empty() {
                    self.postings.remove(&term);
                }
            }
        }
        self.total_len -= doc.doc_len as u64;
        Ok(true)
    }

    pub fn delete_by_source(&mut self, source_path: &str) -> Result<usize, SparseError> {
        let ids: Vec<String> = self
            .docs
            .values()
            .filter(|d| d.chunk.source_path == source_path)
            .map(|d| d.chunk.chunk_id.clone())
            .collect();
        for id in &ids {
            self.remove_chunk(id)?;
        }
        Ok(ids.len())
    }

    pub fn bm25_score(&self, query_terms: &[String], chunk_ref: u32, params: &Bm25Params) -> Result<f64, SparseError> {
        let doc = self.docs.get(&chunk_ref).ok_or(SparseError::UnknownChunk(chunk_ref))?;
        let avgdl = self.avgdl();
        let n = self.doc_count();
        let mut score = 0.0;
        for term in query_terms {
            let list = self.postings(term);
            let Ok(i) = list.binary_search_by_key(&chunk_ref, |p| p.chunk_ref) else { continue };
            let idf = bm25::idf(n, list.len() as u64);
            score += bm25::term_score(list[i].tf(), doc.doc_len, avgdl, idf, params);
        }
        Ok(score)
    }

    fn term_set(&self, term: &str) -> BTreeSet<u32> {
        self.postings(term).iter().map(|p| p.chunk_ref).collect()
    }

    fn phrase_set(&self, terms: &[String]) -> BTreeSet<u32> {
        let Some((first, rest)) = terms.split_first() else { return BTreeSet::new() };
        let mut out = BTreeSet::new();
        'docs: for p in self.postings(first) {
            let others: Vec<&Posting> = match rest
                .iter()
                .map(|t| {
                    let list = self.postings(t);
                    list.binary_search_by_key(&p.chunk_ref, |q| q.chunk_ref).ok().map(|i| &list[i])
                })
                .collect::<Option<Vec<_>>>()
            {
                Some(o) => o,
                None => continue 'docs,
            };
            for &start in &p.positions {
                let matches = others
                    .iter()
                    .enumerate()
                    .all(|(i, q)| q.positions.binary_search(&(start + i as u32 + 1)).is_ok());
                if matches {
                    out.insert(p.chunk_ref);
                    continue 'docs;
                }
            }
        }
        out
    }

    fn field_set(&self, name: &str, value: &str) -> BTreeSet<u32> {
        self.docs
            .values()
            .filter(|d| match name {
                "source" => d.chunk.source_path == value,
                "ext" => d.ext == value,
                _ => false,
            })
            .map(|d| d.chunk_ref)
            .collect()
    }

    /// Evaluates `node` as a set of chunk refs. `context` bounds what a
    /// negation subtracts from; without one, negation is rejected.
    fn eval(&self, node: &QueryAst, context: Option<&BTreeSet<u32>>) -> Result<BTreeSet<u32>, SparseError> {
        match node {
            QueryAst::Term(t) => Ok(self.term_set(t)),
            QueryAst::Phrase(ts) => Ok(self.phrase_set(ts)),
            QueryAst::Field { name, value } => Ok(self.field_set(name, value)),
            QueryAst::Not(child) => {
                let ctx = context.ok_or(SparseError::PureNegationQuery)?;
                let excluded = self.eval(child, Some(ctx))?;
                Ok(ctx.difference(&excluded).copied().collect())
            }
            QueryAst::Or(children) => {
                let mut out = BTreeSet::new();
                for c in children {
                    out.extend(self.eval(c, context)?);
                }
                Ok(out)
            }
            QueryAst::And(children) => {
                let (dependent, independent): (Vec<_>, Vec<_>) = children.iter().partition(|c| needs_context(c));
                let mut acc: Option<BTreeSet<u32>> = context.cloned();
                for c in independent {
                    let s = self.eval(c, None)?;
                    acc = Some(match acc {
                        Some(a) => a.intersection(&s).copied().collect(),
                        None => s,
                    });
                }
                for c in dependent {
                    let s = self.eval(c, acc.as_ref())?;
                    acc = Some(match acc {
                        Some(a) => a.intersection(&s).copied().collect(),
                        None => s,
                    });
                }
                Ok(acc.unwrap_or_default())
            }
        }
    }

    /// Chunk refs matching `ast`.
    pub fn matching(&self, ast: &QueryAst) -> Result<BTreeSet<u32>, SparseError> {
        self.eval(ast, None)
    }

    /// Every match ranked by BM25 over the query's positive terms, best
    /// first, ties broken by chunk id.
    pub fn ranked(&self, ast: &QueryAst, params: &Bm25Params) -> Result<Vec<(u32, f64)>, SparseError> {
        let candidates = self.matching(ast)?;
        let terms = ast.scoring_terms();
        let mut scored: Vec<(u32, f64)> = candidates
            .into_iter()
            .map(|r| Ok((r, self.bm25_score(&terms, r, params)?)))
            .collect::<Result<_, SparseError>>()?;
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[&a.0].chunk.chunk_id.cmp(&self.docs[&b.0].chunk.chunk_id))
        });
        Ok(scored)
    }

    fn hit(&self, chunk_ref: u32, score: f64, terms: &HashSet<String>) -> Hit {
        let doc = &self.docs[&chunk_ref];
        Hit {
            chunk_id: doc.chunk.chunk_id.clone(),
            score,
            snippet: highlight(&doc.chunk.text, terms, &self.highlight),
            source_path: doc.chunk.source_path.clone(),
        }
    }

    pub fn search(
        &self,
        ast: &QueryAst,
        page: usize,
        page_size: usize,
        params: &Bm25Params,
    ) -> Result<ResultPage, SparseError> {
        validate_paging(page, page_size)?;
        let ranked = self.ranked(ast, params)?;
        let terms: HashSet<String> = ast.scoring_terms().into_iter().collect();
        let hits = ranked
            .iter()
            .skip((page - 1).saturating_mul(page_size))
            .take(page_size)
            .map(|&(r, s)| self.hit(r, s, &terms))
            .collect();
        Ok(ResultPage {
            hits,
            total_hits: ranked.len(),
            page,
            page_size,
        })
    }

    /// Re-scores the leading BM25 candidates by embedding similarity to the
    /// raw query, computed on the fly. The pool is `max(4k, 100)`.
    pub fn semantic_rerank(
        &self,
        ast: &QueryAst,
        raw_query: &str,
        k: usize,
        params: &Bm25Params,
        embedder: &dyn Embedder,
    ) -> Result<ResultPage, SparseError> {
        validate_paging(1, k)?;
        let ranked = self.ranked(ast, params)?;
        let pool: Vec<u32> = ranked.iter().take((4 * k).max(100)).map(|&(r, _)| r).collect();
        let query = embedder.embed(raw_query)?;
        let texts: Vec<&str> = pool.iter().map(|r| self.docs[r].chunk.text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        let mut scored: Vec<(u32, f64)> = pool.iter().zip(&vectors).map(|(&r, v)| (r, query.cosine(v))).collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[&a.0].chunk.chunk_id.cmp(&self.docs[&b.0].chunk.chunk_id))
        });
        let terms: HashSet<String> = ast.scoring_terms().into_iter().collect();
        let hits = scored.iter().take(k).map(|&(r, s)| self.hit(r, s, &terms)).collect();
        Ok(ResultPage {
            hits,
            total_hits: ranked.len(),
            page: 1,
            page_size: k,
        })
    }

    /// File name and contents of each persisted file.
    pub fn encode_files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut terms = ByteWriter::new();
        let mut postings = ByteWriter::new();
        for (term, list) in &self.postings {
            terms.u32(term.len() as u32);
            terms.bytes(term.as_bytes());
            terms.u64(postings.len() as u64);
            postings.u32(list.len() as u32);
            for p in list {
                postings.u32(p.chunk_ref);
                postings.u32(p.tf());
                for &pos in &p.positions {
                    postings.u32(pos);
                }
            }
        }
        let mut stored = Vec::new();
        for doc in self.docs.values() {
            serde_json::to_writer(&mut stored, doc).expect("stored chunk serializes");
            stored.push(b'\n');
        }
        let meta = MetaFile {
            doc_count: self.doc_count(),
            total_len: self.total_len,
            format_version: 1,
        };
        vec![
            ("terms.dat", terms.into_inner()),
            ("postings.dat", postings.into_inner()),
            ("stored.dat", stored),
            ("meta.json", serde_json::to_vec_pretty(&meta).expect("meta serializes")),
        ]
    }

    pub fn persist(&self, dir: &Path) -> Result<(), SparseError> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in self.encode_files() {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SparseError> {
        let read = |name: &str| fs::read(dir.join(name));
        let meta: MetaFile = serde_json::from_slice(&read("meta.json")?).map_err(|e| CorruptStore {
            file: "meta.json".into(),
            offset: 0,
            message: e.to_string(),
        })?;
        if meta.format_version != 1 {
            return Err(CorruptStore {
                file: "meta.json".into(),
                offset: 0,
                message: format!("unsupported format_version {}", meta.format_version),
            }
            .into());
        }

        let mut index = SparseIndex::new();
        let stored = read("stored.dat")?;
        let mut offset = 0;
        for line in stored.split_inclusive(|&b| b == b'\n') {
            let doc: StoredChunk = serde_json::from_slice(line).map_err(|e| CorruptStore {
                file: "stored.dat".into(),
                offset,
                message: e.to_string(),
            })?;
            offset += line.len();
            index.next_ref = index.next_ref.max(doc.chunk_ref + 1);
            index.total_len += doc.doc_len as u64;
            index.by_chunk_id.insert(doc.chunk.chunk_id.clone(), doc.chunk_ref);
            index.docs.insert(doc.chunk_ref, doc);
        }

        let terms = read("terms.dat")?;
        let postings = read("postings.dat")?;
        let mut tr = ByteReader::new("terms.dat", &terms);
        while !tr.is_at_end() {
            let len = tr.u32()? as usize;
            let at = tr.offset();
            let term = std::str::from_utf8(tr.take(len)?)
                .map_err(|_| CorruptStore {
                    file: "terms.dat".into(),
                    offset: at,
                    message: "term is not UTF-8".into(),
                })?
                .to_string();
            let start = tr.u64()? as usize;
            if start > postings.len() {
                return Err(tr.corrupt("postings offset beyond postings.dat").into());
            }
            let mut pr = ByteReader::new("postings.dat", &postings[start..]);
            let count = pr.u32()? as usize;
            let mut list = Vec::with_capacity(count.min(index.docs.len()));
            for _ in 0..count {
                let chunk_ref = pr.u32()?;
                let tf = pr.u32()? as usize;
                let positions = (0..tf).map(|_| pr.u32()).collect::<Result<Vec<_>, _>>()?;
                if !index.docs.contains_key(&chunk_ref) {
                    return Err(CorruptStore {
                        file: "postings.dat".into(),
                        offset: start + pr.offset(),
                        message: format!("posting for unknown chunk ref {chunk_ref}"),
                    }
                    .into());
                }
                list.push(Posting { chunk_ref, positions });
            }
            index.postings.insert(term, list);
        }
        if index.doc_count() != meta.doc_count || index.total_len != meta.total_len {
            return Err(CorruptStore {
                file: "meta.json".into(),
                offset: 0,
                message: "statistics disagree with stored.dat".into(),
            }
            .into());
        }
        Ok(index)
    }
}

fn needs_context(node: &QueryAst) -> bool {
    match node {
        QueryAst::Not(_) => true,
        QueryAst::And(cs) => cs.iter().all(needs_context),
        QueryAst::Or(cs) => cs.iter().any(needs_context),
        _ => false,
    }
}

fn validate_paging(page: usize, page_size: usize) -> Result<(), SparseError> {
    if page == 0 {
        return Err(SparseError::InvalidPaging("page is 1-based".into()));
    }
    if !(1..=MAX_PAGE_SIZE).contains(&page_size) {
        return Err(SparseError::InvalidPaging(format!("page_size must be within 1..={MAX_PAGE_SIZE}")));
    }
    Ok(())
}
