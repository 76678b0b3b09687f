//! Boolean query language for the keyword index.
//!
//! ```text
//! query   := or
//! or      := and ( "OR" and )*
//! and     := not ( "AND"? not )*        adjacent atoms are an implicit AND
//! not     := "NOT" not | atom
//! atom    := word | "phrase" | field ":" value | "(" or ")"
//! field   := "source" | "ext"
//! value   := word | "quoted value"
//! ```
//!
//! Operators are case-sensitive and uppercase. Bare words are run through the
//! analyzer: a word that yields several tokens (`A-10`) becomes a phrase.
//! Inside quotes, `\"` and `\\` are escapes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::analyzer::terms;

pub const FIELD_NAMES: &[&str] = &["source", "ext"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum QueryAst {
    Term(String),
    Phrase(Vec<String>),
    Field { name: String, value: String },
    And(Vec<QueryAst>),
    Or(Vec<QueryAst>),
    Not(Box<QueryAst>),
}

impl QueryAst {
    pub fn field(name: &str, value: &str) -> Self {
        QueryAst::Field {
            name: name.to_string(),
            value: value.to_string(),
        }
    }

    /// Terms that contribute to ranking: every Term and Phrase term not
    /// beneath a Not, deduplicated and sorted.
    pub fn scoring_terms(&self) -> Vec<String> {
        fn walk(node: &QueryAst, out: &mut Vec<String>) {
            match node {
                QueryAst::Term(t) => out.push(t.clone()),
                QueryAst::Phrase(ts) => out.extend(ts.iter().cloned()),
                QueryAst::Field { .. } | QueryAst::Not(_) => {}
                QueryAst::And(cs) | QueryAst::Or(cs) => cs.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    /// Checks the structural invariants of a tree built by hand.
    pub fn is_well_formed(&self) -> bool {
        match self {
            QueryAst::Term(t) => terms(t) == [t.clone()],
            QueryAst::Phrase(ts) => !ts.is_empty() && ts.iter().all(|t| terms(t) == [t.clone()]),
            QueryAst::Field { name, value } => FIELD_NAMES.contains(&name.as_str()) && !value.is_empty(),
            QueryAst::And(cs) | QueryAst::Or(cs) => cs.len() >= 2 && cs.iter().all(QueryAst::is_well_formed),
            QueryAst::Not(c) => c.is_well_formed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    EmptyQuery,
    UnbalancedQuote,
    UnbalancedParen,
    EmptyGroup,
    DanglingOperator,
    UnknownField,
    EmptyFieldValue,
    EmptyPhrase,
    NoSearchableTerms,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{message} at position {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Character index into the query string.
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, position: usize, message: impl Into<String>) -> Self {
        ParseError {
            kind,
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    LParen,
    RParen,
    Quoted(String),
    Word(String),
    /// `name:"value"` where the value was quoted.
    QuotedField(String, String),
}

#[derive(Debug, Clone)]
struct Tok {
    lex: Lexeme,
    pos: usize,
}

fn lex(input: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            toks.push(Tok { lex: Lexeme::LParen, pos: i });
            i += 1;
        } else if c == ')' {
            toks.push(Tok { lex: Lexeme::RParen, pos: i });
            i += 1;
        } else if c == '"' {
            let (s, next) = read_quoted(&chars, i)?;
            toks.push(Tok { lex: Lexeme::Quoted(s), pos: i });
            i = next;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '(' | ')' | '"') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if word.ends_with(':') && word.len() > 1 && chars.get(i) == Some(&'"') {
                let (value, next) = read_quoted(&chars, i)?;
                let name = word[..word.len() - 1].to_string();
                toks.push(Tok { lex: Lexeme::QuotedField(name, value), pos: start });
                i = next;
            } else {
                toks.push(Tok { lex: Lexeme::Word(word), pos: start });
            }
        }
    }
    Ok(toks)
}

/// Reads a quoted string starting at the opening quote; returns the
/// unescaped content and the index after the closing quote.
fn read_quoted(chars: &[char], open: usize) -> Result<(String, usize), ParseError> {
    let mut out = String::new();
    let mut i = open + 1;
    while i < chars.len() {
        match chars[i] {
            '"' => return Ok((out, i + 1)),
            '\\' if i + 1 < chars.len() => {
                out.push(chars[i + 1]);
                i += 2;
            }
            c => {
                out.push(c);
                i += 1;
            }
        }
    }
    Err(ParseError::new(ParseErrorKind::UnbalancedQuote, open, "unterminated quote"))
}

struct Parser {
    toks: Vec<Tok>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx)
    }

    fn peek_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok { lex: Lexeme::Word(x), .. }) if x == w)
    }

    fn starts_operand(&self) -> bool {
        match self.peek() {
            Some(Tok { lex: Lexeme::Word(w), .. }) => w != "AND" && w != "OR",
            Some(Tok { lex: Lexeme::RParen, .. }) | None => false,
            Some(_) => true,
        }
    }

    fn expect_operand(&self, op_pos: usize, op: &str) -> Result<(), ParseError> {
        if self.starts_operand() {
            Ok(())
        } else {
            Err(ParseError::new(
                ParseErrorKind::DanglingOperator,
                op_pos,
                format!("operator {op} is missing an operand"),
            ))
        }
    }

    fn parse_or(&mut self) -> Result<QueryAst, ParseError> {
        let mut children = vec![self.parse_and()?];
        while self.peek_word("OR") {
            let pos = self.toks[self.idx].pos;
            self.idx += 1;
            self.expect_operand(pos, "OR")?;
            children.push(self.parse_and()?);
        }
        Ok(collapse(children, QueryAst::Or))
    }

    fn parse_and(&mut self) -> Result<QueryAst, ParseError> {
        let mut children = vec![self.parse_not()?];
        loop {
            if self.peek_word("AND") {
                let pos = self.toks[self.idx].pos;
                self.idx += 1;
                self.expect_operand(pos, "AND")?;
            } else if !self.starts_operand() {
                break;
            }
            children.push(self.parse_not()?);
        }
        Ok(collapse(children, QueryAst::And))
    }

    fn parse_not(&mut self) -> Result<QueryAst, ParseError> {
        if self.peek_word("NOT") {
            let pos = self.toks[self.idx].pos;
            self.idx += 1;
            self.expect_operand(pos, "NOT")?;
            return Ok(QueryAst::Not(Box::new(self.parse_not()?)));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<QueryAst, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError::new(ParseErrorKind::EmptyQuery, self.end, "expected a term"));
        };
        self.idx += 1;
        match tok.lex {
            Lexeme::LParen => {
                if matches!(self.peek(), Some(Tok { lex: Lexeme::RParen, .. })) {
                    return Err(ParseError::new(ParseErrorKind::EmptyGroup, tok.pos, "empty parentheses"));
                }
                if !self.starts_operand() {
                    return match self.peek() {
                        Some(t) => Err(ParseError::new(
                            ParseErrorKind::DanglingOperator,
                            t.pos,
                            "operator is missing an operand",
                        )),
                        None => Err(ParseError::new(ParseErrorKind::UnbalancedParen, tok.pos, "unclosed parenthesis")),
                    };
                }
                let inner = self.parse_or()?;
                match self.peek() {
                    Some(Tok { lex: Lexeme::RParen, .. }) => {
                        self.idx += 1;
                        Ok(inner)
                    }
                    _ => Err(ParseError::new(ParseErrorKind::UnbalancedParen, tok.pos, "unclosed parenthesis")),
                }
            }
            Lexeme::RParen => Err(ParseError::new(
                ParseErrorKind::UnbalancedParen,
                tok.pos,
                "unexpected closing parenthesis",
            )),
            Lexeme::Quoted(s) => {
                let ts = terms(&s);
                if ts.is_empty() {
                    return Err(ParseError::new(ParseErrorKind::EmptyPhrase, tok.pos, "phrase has no terms"));
                }
                Ok(QueryAst::Phrase(ts))
            }
            Lexeme::QuotedField(name, value) => field(name, value, tok.pos),
            Lexeme::Word(w) => {
                if w == "AND" || w == "OR" {
                    return Err(ParseError::new(
                        ParseErrorKind::DanglingOperator,
                        tok.pos,
                        format!("operator {w} is missing an operand"),
                    ));
                }
                if let Some(colon) = w.find(':').filter(|&i| i > 0) {
                    return field(w[..colon].to_string(), w[colon + 1..].to_string(), tok.pos);
                }
                let mut ts = terms(&w);
                match ts.len() {
                    0 => Err(ParseError::new(
                        ParseErrorKind::NoSearchableTerms,
                        tok.pos,
                        format!("'{w}' contains no searchable characters"),
                    )),
                    1 => Ok(QueryAst::Term(ts.remove(0))),
                    _ => Ok(QueryAst::Phrase(ts)),
                }
            }
        }
    }
}

fn field(name: String, value: String, pos: usize) -> Result<QueryAst, ParseError> {
    if !FIELD_NAMES.contains(&name.as_str()) {
        return Err(ParseError::new(
            ParseErrorKind::UnknownField,
            pos,
            format!("unknown field '{name}' (expected one of: {})", FIELD_NAMES.join(", ")),
        ));
    }
    if value.is_empty() {
        return Err(ParseError::new(
            ParseErrorKind::EmptyFieldValue,
            pos,
            format!("field '{name}' has no value"),
        ));
    }
    Ok(QueryAst::Field { name, value })
}

fn collapse(mut children: Vec<QueryAst>, build: fn(Vec<QueryAst>) -> QueryAst) -> QueryAst {
    if children.len() == 1 {
        children.remove(0)
    } else {
        build(children)
    }
}

pub fn parse_query(input: &str) -> Result<QueryAst, ParseError> {
    let toks = lex(input)?;
    if toks.is_empty() {
        return Err(ParseError::new(ParseErrorKind::EmptyQuery, 0, "query is empty"));
    }
    let mut parser = Parser {
        toks,
        idx: 0,
        end: input.chars().count(),
    };
    if !parser.starts_operand() {
        let tok = parser.peek().unwrap();
        let kind = match tok.lex {
            Lexeme::RParen => ParseErrorKind::UnbalancedParen,
            _ => ParseErrorKind::DanglingOperator,
        };
        return Err(ParseError::new(kind, tok.pos, "query cannot start here"));
    }
    let ast = parser.parse_or()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::new(
            ParseErrorKind::UnbalancedParen,
            tok.pos,
            "unexpected closing parenthesis",
        ));
    }
    Ok(ast)
}

/// Builds a disjunction of the analyzed terms of free text, for callers
/// that treat input as a natural-language question rather than a query.
pub fn free_text_query(text: &str) -> Option<QueryAst> {
    let mut ts = terms(text);
    ts.sort();
    ts.dedup();
    let mut nodes: Vec<QueryAst> = ts.into_iter().map(QueryAst::Term).collect();
    match nodes.len() {
        0 => None,
        1 => nodes.pop(),
        _ => Some(QueryAst::Or(nodes)),
    }
}

impl fmt::Display for QueryAst {
    /// Prints in the concrete syntax; the output parses back to `self`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryAst::Term(t) => f.write_str(t),
            QueryAst::Phrase(ts) => write!(f, "\"{}\"", ts.join(" ")),
            QueryAst::Field { name, value } => {
                let simple = !value.is_empty()
                    && !value.chars().any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '"' | '\\'));
                if simple {
                    write!(f, "{name}:{value}")
                } else {
                    let escaped = value.replace('\\', "\\\\").replace('"', "\\\"");
                    write!(f, "{name}:\"{escaped}\"")
                }
            }
            QueryAst::And(cs) => join(f, cs, " AND ", |c| matches!(c, QueryAst::And(_) | QueryAst::Or(_))),
            QueryAst::Or(cs) => join(f, cs, " OR ", |c| matches!(c, QueryAst::Or(_))),
            QueryAst::Not(c) => {
                if matches!(**c, QueryAst::And(_) | QueryAst::Or(_)) {
                    write!(f, "NOT ({c})")
                } else {
                    write!(f, "NOT {c}")
                }
            }
        }
    }
}

fn join(f: &mut fmt::Formatter<'_>, cs: &[QueryAst], sep: &str, needs_parens: fn(&QueryAst) -> bool) -> fmt::Result {
    for (i, c) in cs.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        if needs_parens(c) {
            write!(f, "({c})")?;
        } else {
            write!(f, "{c}")?;
        }
    }
    Ok(())
}
