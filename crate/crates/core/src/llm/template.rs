//! `{name}` placeholder templates. `{{` and `}}` are literal braces.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("missing template variable '{0}'")]
    MissingVar(String),
    #[error("unknown template variable '{0}'")]
    UnknownVar(String),
    #[error("template syntax error at character {position}: {message}")]
    Syntax { position: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    pub fn new(source: impl Into<String>) -> Result<Self, TemplateError> {
        let source = source.into();
        let chars: Vec<char> = source.chars().collect();
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut i = 0;
        while i < chars.len() {
            match (chars[i], chars.get(i + 1)) {
                ('{', Some('{')) | ('}', Some('}')) => {
                    text.push(chars[i]);
                    i += 2;
                }
                ('{', _) => {
                    let close = chars[i + 1..].iter().position(|&c| c == '}').ok_or_else(|| TemplateError::Syntax {
                        position: i,
                        message: "unclosed '{'".into(),
                    })?;
                    let name: String = chars[i + 1..i + 1 + close].iter().collect();
                    if !valid_name(&name) {
                        return Err(TemplateError::Syntax {
                            position: i,
                            message: format!("'{name}' is not a variable name; write '{{{{' for a literal brace"),
                        });
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Var(name));
                    i += close + 2;
                }
                ('}', _) => {
                    return Err(TemplateError::Syntax {
                        position: i,
                        message: "lone '}'; write '}}' for a literal brace".into(),
                    })
                }
                (c, _) => {
                    text.push(c);
                    i += 1;
                }
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        let required = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Var(v) => Some(v.clone()),
                Piece::Text(_) => None,
            })
            .collect();
        Ok(PromptTemplate {
            source,
            pieces,
            required,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn required_vars(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes every placeholder. The supplied names must equal the
    /// required set exactly; values are inserted verbatim.
    pub fn render<'a>(&self, vars: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<String, TemplateError> {
        let vars: BTreeMap<&str, &str> = vars.into_iter().collect();
        if let Some(unknown) = vars.keys().find(|k| !self.required.contains(**k)) {
            return Err(TemplateError::UnknownVar(unknown.to_string()));
        }
        if let Some(missing) = self.required.iter().find(|r| !vars.contains_key(r.as_str())) {
            return Err(TemplateError::MissingVar(missing.clone()));
        }
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => out.push_str(vars[v.as_str()]),
            }
        }
        Ok(out)
    }
}
