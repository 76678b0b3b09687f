//! Question answering over a store with numbered source attribution.

use serde::{Deserialize, Serialize};

use super::{require_vars, PipelineError};
use crate::llm::{CompletionRequest, LlmBackend, PromptTemplate};
use crate::store::Store;

/// Returned without calling the model when retrieval finds nothing.
pub const NO_CONTEXT_ANSWER: &str = "No relevant passages were found in the indexed documents, so no answer was generated.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub chunk_id: String,
    pub source_path: String,
    pub snippet: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question: String,
    pub answer_text: String,
    /// In retrieval order; source `[n]` in the prompt is `sources[n - 1]`.
    pub sources: Vec<Source>,
    /// Empty when no model call was made.
    pub prompt_used: String,
}

/// Retrieves the top `k` chunks for `question`, numbers them as `[n] path`
/// blocks in the prompt and returns the model's reply verbatim.
pub fn ask(
    question: &str,
    store: &Store,
    llm: &dyn LlmBackend,
    k: usize,
    template: &PromptTemplate,
) -> Result<Answer, PipelineError> {
    if question.trim().is_empty() {
        return Err(PipelineError::EmptyQuestion);
    }
    require_vars(template, &["context", "question"])?;
    let retrieved = store.retrieve(question, k)?;
    if retrieved.is_empty() {
        return Ok(Answer {
            question: question.to_string(),
            answer_text: NO_CONTEXT_ANSWER.to_string(),
            sources: Vec::new(),
            prompt_used: String::new(),
        });
    }
    let context = retrieved
        .iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}\n{}", i + 1, r.chunk.source_path, r.chunk.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let prompt = template.render([("context", context.as_str()), ("question", question)])?;
    let completion = llm.complete(&CompletionRequest::new(prompt.clone()))?;
    let sources = retrieved
        .into_iter()
        .map(|r| Source {
            snippet: store.question_snippet(&r.chunk.text, question),
            chunk_id: r.chunk.chunk_id,
            source_path: r.chunk.source_path,
            score: r.score,
        })
        .collect();
    Ok(Answer {
        question: question.to_string(),
        answer_text: completion.text,
        sources,
        prompt_used: prompt,
    })
}
