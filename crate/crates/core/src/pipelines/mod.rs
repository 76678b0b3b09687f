//! Document workflows built on the stores and the LLM backends.

pub mod ask;
pub mod classify;
pub mod extract;
pub mod summarize;
pub mod units;

use thiserror::Error;

use crate::dense::EmbedError;
use crate::ingest::IngestError;
use crate::llm::{LlmError, PromptTemplate, TemplateError};
use crate::store::StoreError;

pub use ask::{ask, Answer, Source, NO_CONTEXT_ANSWER};
pub use classify::{
    model_id, predict_vector, tfidf_features, tfidf_problem, train_centroid, train_fewshot, train_tfidf_linear,
    ClassScore, ClassifyError, LinearTextModel, LogisticProblem, ModelParams, Prediction, TrainingMeta,
};
pub use extract::{export_csv, extract, write_csv, ExtractionRecord, RecordStatus, Unit};
pub use summarize::{select_concept_units, summarize_concept, summarize_map_reduce, MapReduceTemplates, Strategy, Summary,
    SummarizeParams, NOT_FOUND_SUMMARY};
pub use units::{split_units, UnitKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("template must use exactly the placeholders {expected}, found {found}")]
    TemplateVars { expected: String, found: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unit {index}: {source}")]
    Unit { index: usize, source: LlmError },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Default prompt templates, shipped as versioned text assets.
pub mod templates {
    pub const ASK: &str = include_str!("../../templates/ask.v1.txt");
    pub const EXTRACT: &str = include_str!("../../templates/extract.v1.txt");
    pub const SUMMARIZE_MAP: &str = include_str!("../../templates/summarize_map.v1.txt");
    pub const SUMMARIZE_REDUCE: &str = include_str!("../../templates/summarize_reduce.v1.txt");
    pub const CONCEPT_MAP: &str = include_str!("../../templates/concept_map.v1.txt");
    pub const CONCEPT_REDUCE: &str = include_str!("../../templates/concept_reduce.v1.txt");

    /// `(asset name, text)` for every default template.
    pub const ALL: [(&str, &str); 6] = [
        ("ask.v1.txt", ASK),
        ("extract.v1.txt", EXTRACT),
        ("summarize_map.v1.txt", SUMMARIZE_MAP),
        ("summarize_reduce.v1.txt", SUMMARIZE_REDUCE),
        ("concept_map.v1.txt", CONCEPT_MAP),
        ("concept_reduce.v1.txt", CONCEPT_REDUCE),
    ];
}

/// Errors unless `t` uses exactly the placeholders in `vars`.
pub(crate) fn require_vars(t: &PromptTemplate, vars: &[&str]) -> Result<(), PipelineError> {
    let found: Vec<&str> = t.required_vars().iter().map(String::as_str).collect();
    let mut expected: Vec<&str> = vars.to_vec();
    expected.sort_unstable();
    if found != expected {
        let show = |v: &[&str]| v.iter().map(|n| format!("{{{n}}}")).collect::<Vec<_>>().join(", ");
        return Err(PipelineError::TemplateVars {
            expected: show(&expected),
            found: show(&found),
        });
    }
    Ok(())
}
