//! Hierarchical navigable small-world graph for approximate cosine search.
//!
//! Nodes live in insertion order in a slot vector; edges refer to slots.
//! Each node is assigned a top layer drawn from an exponential distribution
//! with a seeded RNG, so the same insertion sequence always yields the same
//! graph. Deletions are tombstones: the node keeps routing searches but is
//! filtered from results, and the whole graph is rebuilt from live vectors
//! once tombstones exceed a fifth of all nodes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::EmbeddingVector;
use crate::codec::{ByteReader, ByteWriter, CorruptStore};

#[derive(Debug, Error, PartialEq)]
pub enum HnswError {
    #[error("id {0} already present")]
    DuplicateId(u64),
    #[error("zero vectors cannot be indexed")]
    ZeroVector,
    #[error("vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index has no live vectors")]
    EmptyIndex,
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Max neighbors per node on upper layers; layer 0 allows twice this.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub level_mult: f64,
    pub rng_seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 50,
            level_mult: 1.0 / 16f64.ln(),
            rng_seed: 42,
        }
    }
}

impl HnswParams {
    pub fn with_m(m: usize) -> Self {
        HnswParams {
            m,
            level_mult: 1.0 / (m as f64).ln(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), HnswError> {
        if self.m < 2 {
            return Err(HnswError::InvalidParams("m must be >= 2".into()));
        }
        if self.ef_construction < self.m {
            return Err(HnswError::InvalidParams("ef_construction must be >= m".into()));
        }
        if self.ef_search < 1 {
            return Err(HnswError::InvalidParams("ef_search must be >= 1".into()));
        }
        if !(self.level_mult.is_finite() && self.level_mult > 0.0) {
            return Err(HnswError::InvalidParams("level_mult must be positive".into()));
        }
        Ok(())
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

/// Tombstone share above which the graph is rebuilt.
const REBUILD_TOMBSTONE_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    id: u64,
    vector: EmbeddingVector,
    deleted: bool,
    /// `layers[l]` holds neighbor slots on layer `l`.
    layers: Vec<Vec<u32>>,
}

impl Node {
    fn max_layer(&self) -> usize {
        self.layers.len() - 1
    }
}

/// Similarity paired with a slot; orders by similarity, then prefers the
/// lower slot, so heaps are deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    slot: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    nodes: Vec<Node>,
    slot_of: HashMap<u64, u32>,
    entry: Option<u32>,
    deleted_count: usize,
    rng: ChaCha8Rng,
}

impl PartialEq for HnswIndex {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.dim == other.dim
            && self.nodes == other.nodes
            && self.entry == other.entry
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, HnswError> {
        params.validate()?;
        Ok(HnswIndex {
            params,
            dim,
            nodes: Vec::new(),
            slot_of: HashMap::new(),
            entry: None,
            deleted_count: 0,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes in the graph, tombstones included.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn live_count(&self) -> usize {
        self.nodes.len() - self.deleted_count
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slot_of
            .get(&id)
            .is_some_and(|&s| !self.nodes[s as usize].deleted)
    }

    pub fn vector(&self, id: u64) -> Option<&EmbeddingVector> {
        let slot = *self.slot_of.get(&id)?;
        let node = &self.nodes[slot as usize];
        (!node.deleted).then_some(&node.vector)
    }

    /// Live `(id, vector)` pairs in insertion order.
    pub fn live_vectors(&self) -> impl Iterator<Item = (u64, &EmbeddingVector)> {
        self.nodes.iter().filter(|n| !n.deleted).map(|n| (n.id, &n.vector))
    }

    pub fn entry_id(&self) -> Option<u64> {
        self.entry.map(|s| self.nodes[s as usize].id)
    }

    fn sim(&self, query: &EmbeddingVector, slot: u32) -> f64 {
        // unit vectors stored in f32 can overshoot by rounding
        query.dot(&self.nodes[slot as usize].vector).clamp(-1.0, 1.0)
    }

    fn draw_level(&mut self) -> usize {
        let u: f64 = 1.0 - self.rng.gen::<f64>();
        (-u.ln() * self.params.level_mult).floor() as usize
    }

    pub fn insert(&mut self, id: u64, vector: EmbeddingVector) -> Result<(), HnswError> {
        if self.slot_of.contains_key(&id) {
            return Err(HnswError::DuplicateId(id));
        }
        if vector.dim() != self.dim {
            return Err(HnswError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        if vector.is_zero() {
            return Err(HnswError::ZeroVector);
        }
        let level = self.draw_level();
        let slot = self.nodes.len() as u32;
        self.nodes.push(Node {
            id,
            vector,
            deleted: false,
            layers: vec![Vec::new(); level + 1],
        });
        self.slot_of.insert(id, slot);

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            return Ok(());
        };
        let query = self.nodes[slot as usize].vector.clone();
        let top = self.nodes[entry as usize].max_layer();
        let mut eps = vec![Scored {
            sim: self.sim(&query, entry),
            slot: entry,
        }];
        for layer in (level + 1..=top).rev() {
            eps = self.search_layer(&query, &eps, 1, layer);
        }
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&query, &eps, self.params.ef_construction, layer);
            let neighbors: Vec<u32> = found
                .iter()
                .filter(|s| s.slot != slot)
                .take(self.params.m)
                .map(|s| s.slot)
                .collect();
            for &n in &neighbors {
                self.connect(n, slot, layer);
            }
            self.nodes[slot as usize].layers[layer] = neighbors;
            eps = found;
        }
        if level > top {
            self.entry = Some(slot);
        }
        Ok(())
    }

    /// Adds `to` to `from`'s neighbor list, pruning to the layer cap by
    /// keeping the closest neighbors of `from`.
    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.params.cap(layer);
        let list = &mut self.nodes[from as usize].layers[layer];
        if list.contains(&to) {
            return;
        }
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = self.nodes[from as usize].vector.clone();
        let mut scored: Vec<Scored> = self.nodes[from as usize].layers[layer]
            .iter()
            .map(|&s| Scored {
                sim: self.sim(&base, s),
                slot: s,
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        scored.truncate(cap);
        self.nodes[from as usize].layers[layer] = scored.into_iter().map(|s| s.slot).collect();
    }

    /// Beam search on one layer; returns up to `ef` nodes, best first.
    fn search_layer(&self, query: &EmbeddingVector, entry: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<u32> = entry.iter().map(|s| s.slot).collect();
        let mut candidates: BinaryHeap<Scored> = entry.iter().copied().collect();
        let mut results: BinaryHeap<Reverse<Scored>> = entry.iter().copied().map(Reverse).collect();
        while results.len() > ef {
            results.pop();
        }
        while let Some(current) = candidates.pop() {
            let worst = results.peek().map(|r| r.0);
            if let Some(worst) = worst {
                if results.len() >= ef && current < worst {
                    break;
                }
            }
            let node = &self.nodes[current.slot as usize];
            let Some(neighbors) = node.layers.get(layer) else { continue };
            for &n in neighbors {
                if !visited.insert(n) {
                    continue;
                }
                let scored = Scored {
                    sim: self.sim(query, n),
                    slot: n,
                };
                let admit = results.len() < ef || results.peek().is_some_and(|w| scored > w.0);
                if admit {
                    candidates.push(scored);
                    results.push(Reverse(scored));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Top-`k` live ids by cosine similarity, best first, ties by id.
    pub fn search(&self, query: &EmbeddingVector, k: usize, ef_search: usize) -> Result<Vec<(u64, f64)>, HnswError> {
        if query.dim() != self.dim {
            return Err(HnswError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let entry = match self.entry {
            Some(e) if self.live_count() > 0 => e,
            _ => return Err(HnswError::EmptyIndex),
        };
        let k = k.max(1);
        let ef = ef_search.max(k) + self.deleted_count;
        let mut eps = vec![Scored {
            sim: self.sim(query, entry),
            slot: entry,
        }];
        for layer in (1..=self.nodes[entry as usize].max_layer()).rev() {
            eps = self.search_layer(query, &eps, 1, layer);
        }
        let found = self.search_layer(query, &eps, ef, 0);
        let mut hits: Vec<(u64, f64)> = found
            .into_iter()
            .filter(|c| !self.nodes[c.slot as usize].deleted)
            .map(|c| (self.nodes[c.slot as usize].id, c.sim))
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Exact top-`k` by scanning every live vector.
    pub fn brute_force(&self, query: &EmbeddingVector, k: usize) -> Vec<(u64, f64)> {
        let mut hits: Vec<(u64, f64)> = self.live_vectors().map(|(id, v)| (id, query.dot(v).clamp(-1.0, 1.0))).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }

    /// Tombstones `id`. Returns false when it was not live.
    pub fn delete(&mut self, id: u64) -> bool {
        let Some(&slot) = self.slot_of.get(&id) else { return false };
        if self.nodes[slot as usize].deleted {
            return false;
        }
        self.nodes[slot as usize].deleted = true;
        self.deleted_count += 1;
        if self.entry == Some(slot) {
            self.repair_entry();
        }
        if self.deleted_count as f64 > REBUILD_TOMBSTONE_RATIO * self.nodes.len() as f64 {
            self.rebuild();
        }
        true
    }

    /// Points the entry at the live node with the highest layer (lowest
    /// slot on ties).
    fn repair_entry(&mut self) {
        self.entry = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.deleted)
            .max_by(|(sa, a), (sb, b)| a.max_layer().cmp(&b.max_layer()).then(sb.cmp(sa)))
            .map(|(s, _)| s as u32);
    }

    /// Rebuilds the graph from live vectors, dropping tombstones. The RNG
    /// stream continues, so rebuilds are deterministic too.
    pub fn rebuild(&mut self) {
        let live: Vec<(u64, EmbeddingVector)> = self
            .nodes
            .drain(..)
            .filter(|n| !n.deleted)
            .map(|n| (n.id, n.vector))
            .collect();
        self.slot_of.clear();
        self.entry = None;
        self.deleted_count = 0;
        for (id, v) in live {
            self.insert(id, v).expect("live vectors are valid and unique");
        }
    }

    /// Verifies structural invariants; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (slot, node) in self.nodes.iter().enumerate() {
            for (layer, list) in node.layers.iter().enumerate() {
                if list.len() > self.params.cap(layer) {
                    return Err(format!("node {} layer {layer} has {} neighbors", node.id, list.len()));
                }
                let mut seen = HashSet::new();
                for &n in list {
                    let Some(other) = self.nodes.get(n as usize) else {
                        return Err(format!("node {} links to missing slot {n}", node.id));
                    };
                    if n as usize == slot {
                        return Err(format!("node {} links to itself", node.id));
                    }
                    if other.max_layer() < layer {
                        return Err(format!("node {} links to {} above its top layer", node.id, other.id));
                    }
                    if !seen.insert(n) {
                        return Err(format!("node {} has duplicate neighbor {}", node.id, other.id));
                    }
                }
            }
        }
        let live_max = self.nodes.iter().filter(|n| !n.deleted).map(Node::max_layer).max();
        match (self.entry, live_max) {
            (None, None) => Ok(()),
            (Some(e), Some(max)) => {
                let entry = &self.nodes[e as usize];
                if entry.deleted {
                    Err("entry point is tombstoned".into())
                } else if entry.max_layer() != max {
                    Err(format!("entry layer {} below live max {max}", entry.max_layer()))
                } else {
                    Ok(())
                }
            }
            (e, m) => Err(format!("entry {e:?} inconsistent with live max layer {m:?}")),
        }
    }

    /// `(vectors.dat, graph.dat)` contents.
    pub fn encode(&self) -> (Vec<u8>, Vec<u8>) {
        let mut v = ByteWriter::new();
        v.bytes(b"DVEC");
        v.u32(1);
        v.u32(self.dim as u32);
        v.u64(self.nodes.len() as u64);
        for node in &self.nodes {
            v.u64(node.id);
            for &x in &node.vector.0 {
                v.f32(x);
            }
        }

        let mut g = ByteWriter::new();
        g.bytes(b"HNSW");
        g.u32(1);
        g.u32(self.params.m as u32);
        g.u32(self.params.ef_construction as u32);
        g.u32(self.params.ef_search as u32);
        g.f64(self.params.level_mult);
        g.u64(self.params.rng_seed);
        let pos = self.rng.get_word_pos();
        g.u64((pos >> 64) as u64);
        g.u64(pos as u64);
        match self.entry {
            Some(e) => {
                g.u8(1);
                g.u64(self.nodes[e as usize].id);
            }
            None => {
                g.u8(0);
                g.u64(0);
            }
        }
        g.u64(self.nodes.len() as u64);
        for node in &self.nodes {
            g.u64(node.id);
            g.u8(node.deleted as u8);
            g.u32(node.max_layer() as u32);
            for list in &node.layers {
                g.u64(list.len() as u64);
                for &n in list {
                    g.u64(self.nodes[n as usize].id);
                }
            }
        }
        (v.into_inner(), g.into_inner())
    }

    pub fn decode(vectors: &[u8], graph: &[u8]) -> Result<Self, CorruptStore> {
        let mut r = ByteReader::new("vectors.dat", vectors);
        r.expect_magic(b"DVEC")?;
        let version = r.u32()?;
        if version != 1 {
            return Err(r.corrupt(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.count(8 + 4 * dim)?;
        let mut stored = Vec::with_capacity(count);
        for _ in 0..count {
            let id = r.u64()?;
            let values = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
            stored.push((id, EmbeddingVector(values)));
        }
        r.finish()?;

        let mut r = ByteReader::new("graph.dat", graph);
        r.expect_magic(b"HNSW")?;
        let version = r.u32()?;
        if version != 1 {
            return Err(r.corrupt(format!("unsupported version {version}")));
        }
        let params = HnswParams {
            m: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            ef_search: r.u32()? as usize,
            level_mult: r.f64()?,
            rng_seed: r.u64()?,
        };
        params.validate().map_err(|e| r.corrupt(e.to_string()))?;
        let word_pos = ((r.u64()? as u128) << 64) | r.u64()? as u128;
        let has_entry = r.u8()? == 1;
        let entry_id = r.u64()?;
        let node_count = r.count(13)?;
        if node_count != stored.len() {
            return Err(r.corrupt(format!("graph has {node_count} nodes, vectors.dat has {}", stored.len())));
        }
        let slot_of: HashMap<u64, u32> = stored.iter().enumerate().map(|(i, (id, _))| (*id, i as u32)).collect();
        if slot_of.len() != stored.len() {
            return Err(r.corrupt("duplicate ids in vectors.dat"));
        }
        let mut nodes = Vec::with_capacity(node_count);
        let mut deleted_count = 0;
        for (id, vector) in stored {
            let at = r.offset();
            if r.u64()? != id {
                return Err(CorruptStore {
                    file: "graph.dat".into(),
                    offset: at,
                    message: "node order differs from vectors.dat".into(),
                });
            }
            let deleted = r.u8()? == 1;
            deleted_count += deleted as usize;
            let max_layer = r.u32()? as usize;
            let mut layers = Vec::with_capacity(max_layer + 1);
            for _ in 0..=max_layer {
                let len = r.count(8)?;
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    let nid = r.u64()?;
                    let slot = *slot_of.get(&nid).ok_or_else(|| r.corrupt(format!("unknown neighbor id {nid}")))?;
                    list.push(slot);
                }
                layers.push(list);
            }
            nodes.push(Node {
                id,
                vector,
                deleted,
                layers,
            });
        }
        r.finish()?;
        let entry = if has_entry {
            Some(*slot_of.get(&entry_id).ok_or_else(|| r.corrupt("unknown entry point"))?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        rng.set_word_pos(word_pos);
        Ok(HnswIndex {
            params,
            dim,
            nodes,
            slot_of,
            entry,
            deleted_count,
            rng,
        })
    }
}
