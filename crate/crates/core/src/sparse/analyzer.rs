use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub term: String,
    pub position: usize,
    /// Character offsets, end exclusive.
    pub start: usize,
    pub end: usize,
}

/// Splits on every non-alphanumeric character and lowercases each piece.
/// No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut idx = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = idx;
            }
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            push(&mut tokens, &mut current, start, idx);
        }
        idx += 1;
    }
    if !current.is_empty() {
        push(&mut tokens, &mut current, start, idx);
    }
    tokens
}

fn push(tokens: &mut Vec<Token>, current: &mut String, start: usize, end: usize) {
    tokens.push(Token {
        term: std::mem::take(current),
        position: tokens.len(),
        start,
        end,
    });
}

/// Just the terms of [`tokenize`].
pub fn terms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.term).collect()
}
