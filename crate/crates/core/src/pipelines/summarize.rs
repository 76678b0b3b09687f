//! Map-reduce and concept-focused summarization.
//!
//! A reduce round is one model call over a group of at least two pending
//! outputs. When all pending outputs fit in `max_reduce_chars` the group is
//! everything and the round is final; otherwise the group is the longest
//! prefix that fits (never fewer than two), replaced by its summary. So a
//! document of `n > 1` passages always costs `n + reduce_rounds` calls.

use serde::{Deserialize, Serialize};

use super::units::{split_units, UnitKind};
use super::{require_vars, templates, PipelineError};
use crate::dense::Embedder;
use crate::ingest::ChunkingParams;
use crate::llm::{CompletionRequest, LlmBackend, PromptTemplate};

/// Returned without calling the model when no passage matches the concept.
pub const NOT_FOUND_SUMMARY: &str = "No passages in the document are sufficiently related to the requested concept.";

const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MapReduce,
    ConceptFocused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub strategy: Strategy,
    pub units_considered: usize,
    pub units_used: usize,
    /// Indices of the passages summarized, ascending.
    pub unit_indices: Vec<usize>,
    /// Per-passage outputs; empty on the single-passage path.
    pub map_outputs: Vec<String>,
    pub reduce_rounds: usize,
    pub llm_calls: usize,
}

/// Map template uses `{text}`, reduce template `{summaries}`; concept
/// templates additionally use `{concept}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapReduceTemplates {
    pub map: PromptTemplate,
    pub reduce: PromptTemplate,
}

impl MapReduceTemplates {
    pub fn general() -> Self {
        MapReduceTemplates {
            map: PromptTemplate::new(templates::SUMMARIZE_MAP).expect("bundled template parses"),
            reduce: PromptTemplate::new(templates::SUMMARIZE_REDUCE).expect("bundled template parses"),
        }
    }

    pub fn concept() -> Self {
        MapReduceTemplates {
            map: PromptTemplate::new(templates::CONCEPT_MAP).expect("bundled template parses"),
            reduce: PromptTemplate::new(templates::CONCEPT_REDUCE).expect("bundled template parses"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeParams {
    pub chunking: ChunkingParams,
    pub max_reduce_chars: usize,
    /// Concept-focused only.
    pub sim_threshold: f64,
    pub max_units: usize,
}

impl Default for SummarizeParams {
    fn default() -> Self {
        SummarizeParams {
            chunking: ChunkingParams::default(),
            max_reduce_chars: 8000,
            sim_threshold: 0.3,
            max_units: 20,
        }
    }
}

struct Reduced {
    text: String,
    map_outputs: Vec<String>,
    reduce_rounds: usize,
    calls: usize,
}

fn call(llm: &dyn LlmBackend, prompt: String) -> Result<String, crate::llm::LlmError> {
    Ok(llm.complete(&CompletionRequest::new(prompt))?.text)
}

fn map_reduce(
    units: &[(usize, String)],
    llm: &dyn LlmBackend,
    t: &MapReduceTemplates,
    extra: &[(&str, &str)],
    max_reduce_chars: usize,
) -> Result<Reduced, PipelineError> {
    let render_map = |text: &str| {
        let mut vars = extra.to_vec();
        vars.push(("text", text));
        t.map.render(vars)
    };
    if let [(index, only)] = units {
        let text = call(llm, render_map(only)?).map_err(|source| PipelineError::Unit { index: *index, source })?;
        return Ok(Reduced {
            text,
            map_outputs: Vec::new(),
            reduce_rounds: 0,
            calls: 1,
        });
    }
    let mut map_outputs = Vec::with_capacity(units.len());
    for (index, text) in units {
        let out = call(llm, render_map(text)?).map_err(|source| PipelineError::Unit { index: *index, source })?;
        map_outputs.push(out);
    }
    let mut pending = map_outputs.clone();
    let mut rounds = 0;
    while pending.len() > 1 {
        let mut take = 2;
        let mut len = pending[0].chars().count() + SEPARATOR.len() + pending[1].chars().count();
        while take < pending.len() {
            let next = len + SEPARATOR.len() + pending[take].chars().count();
            if next > max_reduce_chars {
                break;
            }
            len = next;
            take += 1;
        }
        let joined = pending[..take].join(SEPARATOR);
        let mut vars = extra.to_vec();
        vars.push(("summaries", &joined));
        let merged = call(llm, t.reduce.render(vars)?)?;
        rounds += 1;
        pending.splice(..take, [merged]);
    }
    Ok(Reduced {
        text: pending.pop().expect("one output remains"),
        calls: map_outputs.len() + rounds,
        map_outputs,
        reduce_rounds: rounds,
    })
}

fn passages(doc_text: &str, params: &SummarizeParams) -> Result<Vec<(usize, String)>, PipelineError> {
    if doc_text.trim().is_empty() {
        return Err(PipelineError::EmptyInput("document text"));
    }
    let units = split_units(doc_text, UnitKind::Passage, &params.chunking)?;
    Ok(units.into_iter().filter(|(_, t)| !t.trim().is_empty()).collect())
}

/// Summarizes a document passage by passage, then merges the partial
/// summaries. A one-passage document takes a single direct call.
pub fn summarize_map_reduce(
    doc_text: &str,
    llm: &dyn LlmBackend,
    templates: &MapReduceTemplates,
    params: &SummarizeParams,
) -> Result<Summary, PipelineError> {
    require_vars(&templates.map, &["text"])?;
    require_vars(&templates.reduce, &["summaries"])?;
    let units = passages(doc_text, params)?;
    let r = map_reduce(&units, llm, templates, &[], params.max_reduce_chars)?;
    Ok(Summary {
        text: r.text,
        strategy: Strategy::MapReduce,
        units_considered: units.len(),
        units_used: units.len(),
        unit_indices: units.iter().map(|(i, _)| *i).collect(),
        map_outputs: r.map_outputs,
        reduce_rounds: r.reduce_rounds,
        llm_calls: r.calls,
    })
}

/// Passages scoring at least `threshold` against `concept`, best first
/// (ties by index), at most `max_units`, returned in index order with
/// their similarities.
pub fn select_concept_units(
    units: &[(usize, String)],
    concept: &str,
    embedder: &dyn Embedder,
    threshold: f64,
    max_units: usize,
) -> Result<Vec<(usize, f64)>, PipelineError> {
    let target = embedder.embed(concept)?;
    let texts: Vec<&str> = units.iter().map(|(_, t)| t.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    let mut scored: Vec<(usize, f64)> = units
        .iter()
        .zip(&vectors)
        .map(|((i, _), v)| (*i, target.cosine(v)))
        .filter(|&(_, s)| s >= threshold)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(max_units);
    scored.sort_by_key(|&(i, _)| i);
    Ok(scored)
}

/// Summarizes only the passages related to `concept`.
pub fn summarize_concept(
    doc_text: &str,
    concept: &str,
    embedder: &dyn Embedder,
    llm: &dyn LlmBackend,
    templates: &MapReduceTemplates,
    params: &SummarizeParams,
) -> Result<Summary, PipelineError> {
    if concept.trim().is_empty() {
        return Err(PipelineError::EmptyInput("concept"));
    }
    require_vars(&templates.map, &["concept", "text"])?;
    require_vars(&templates.reduce, &["concept", "summaries"])?;
    let units = passages(doc_text, params)?;
    let kept = select_concept_units(&units, concept, embedder, params.sim_threshold, params.max_units)?;
    let unit_indices: Vec<usize> = kept.iter().map(|(i, _)| *i).collect();
    if kept.is_empty() {
        return Ok(Summary {
            text: NOT_FOUND_SUMMARY.into(),
            strategy: Strategy::ConceptFocused,
            units_considered: units.len(),
            units_used: 0,
            unit_indices,
            map_outputs: Vec::new(),
            reduce_rounds: 0,
            llm_calls: 0,
        });
    }
    let chosen: Vec<(usize, String)> = units.iter().filter(|(i, _)| unit_indices.contains(i)).cloned().collect();
    let r = map_reduce(&chosen, llm, templates, &[("concept", concept)], params.max_reduce_chars)?;
    Ok(Summary {
        text: r.text,
        strategy: Strategy::ConceptFocused,
        units_considered: units.len(),
        units_used: chosen.len(),
        unit_indices,
        map_outputs: r.map_outputs,
        reduce_rounds: r.reduce_rounds,
        llm_calls: r.calls,
    })
}
