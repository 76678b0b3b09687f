//! Deterministic scriptable backend for offline runs and tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{count_units, BackendKind, Completion, CompletionRequest, FinishReason, LlmBackend, LlmError, Usage};

pub const ECHO_PREFIX: &str = "STUB:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMode {
    EchoPrompt,
    Canned,
}

#[derive(Debug)]
pub struct StubBackend {
    mode: StubMode,
    canned: Vec<String>,
    next: AtomicUsize,
    call_log: Mutex<Vec<CompletionRequest>>,
}

impl StubBackend {
    /// Replies `"STUB:" + prompt`.
    pub fn echo() -> Self {
        Self::build(StubMode::EchoPrompt, Vec::new())
    }

    /// Replies with `responses` in order, wrapping around.
    pub fn canned<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::build(StubMode::Canned, responses.into_iter().map(Into::into).collect())
    }

    fn build(mode: StubMode, canned: Vec<String>) -> Self {
        StubBackend {
            mode,
            canned,
            next: AtomicUsize::new(0),
            call_log: Mutex::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> StubMode {
        self.mode
    }

    /// Snapshot of every request received, in arrival order.
    pub fn call_log(&self) -> Vec<CompletionRequest> {
        self.call_log.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.call_log.lock().expect("call log poisoned").len()
    }
}

impl LlmBackend for StubBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }

    fn id(&self) -> String {
        match self.mode {
            StubMode::EchoPrompt => "stub:echo_prompt".into(),
            StubMode::Canned => "stub:canned".into(),
        }
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        self.call_log.lock().expect("call log poisoned").push(req.clone());
        req.validate()?;
        let text = match self.mode {
            StubMode::EchoPrompt => format!("{ECHO_PREFIX}{}", req.prompt),
            StubMode::Canned => {
                if self.canned.is_empty() {
                    return Err(LlmError::BackendUnavailable("canned stub has no responses".into()));
                }
                let i = self.next.fetch_add(1, Ordering::SeqCst) % self.canned.len();
                self.canned[i].clone()
            }
        };
        Ok(Completion {
            usage: Usage {
                prompt_units: count_units(&req.prompt),
                output_units: count_units(&text),
            },
            text,
            finish_reason: FinishReason::Stop,
            backend_id: self.id(),
            error_detail: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_and_canned() {
        let echo = StubBackend::echo();
        assert_eq!(super::super::complete(&echo, "hello").unwrap().text, "STUB:hello");
        let canned = StubBackend::canned(["a", "b"]);
        let texts: Vec<_> = (0..3)
            .map(|_| super::super::complete(&canned, "q").unwrap().text)
            .collect();
        assert_eq!(texts, ["a", "b", "a"]);
        assert_eq!(canned.call_count(), 3);
    }

    #[test]
    fn concurrent_calls_are_all_logged() {
        let stub = StubBackend::echo();
        std::thread::scope(|s| {
            for t in 0..8 {
                let stub = &stub;
                s.spawn(move || {
                    for i in 0..25 {
                        stub.complete(&CompletionRequest::new(format!("{t}-{i}"))).unwrap();
                    }
                });
            }
        });
        let log = stub.call_log();
        assert_eq!(log.len(), 200);
        let mut prompts: Vec<_> = log.into_iter().map(|r| r.prompt).collect();
        prompts.sort();
        prompts.dedup();
        assert_eq!(prompts.len(), 200);
    }
}
