//! Splitting text into the units pipelines operate on.

use serde::{Deserialize, Serialize};

use crate::ingest::{chunk_text, ChunkingParams, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Sentence,
    Paragraph,
    Passage,
}

impl std::str::FromStr for UnitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sentence" => Ok(UnitKind::Sentence),
            "paragraph" => Ok(UnitKind::Paragraph),
            "passage" => Ok(UnitKind::Passage),
            other => Err(format!("unknown unit '{other}' (expected sentence, paragraph or passage)")),
        }
    }
}

/// Numbered units of `text`. Sentences end at `.`, `?` or `!` followed by
/// whitespace and an uppercase letter, or by the end of the text; this is
/// deliberately naive. Paragraphs are separated by blank lines. Passages are
/// the chunking windows. Units are trimmed and empty ones dropped, except
/// passages, which are returned verbatim.
pub fn split_units(text: &str, unit: UnitKind, params: &ChunkingParams) -> Result<Vec<(usize, String)>, IngestError> {
    let pieces: Vec<String> = match unit {
        UnitKind::Sentence => sentences(text),
        UnitKind::Paragraph => paragraphs(text),
        UnitKind::Passage => chunk_text(text, params)?
            .iter()
            .map(|s| s.slice(text).to_string())
            .collect(),
    };
    Ok(pieces.into_iter().enumerate().collect())
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &(byte, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let mut j = i + 1;
        let boundary = match chars.get(j) {
            None => true,
            Some((_, n)) if n.is_whitespace() => {
                while chars.get(j).is_some_and(|(_, n)| n.is_whitespace()) {
                    j += 1;
                }
                chars.get(j).map_or(true, |(_, n)| n.is_uppercase())
            }
            Some(_) => false,
        };
        if boundary {
            let end = byte + c.len_utf8();
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            push_trimmed(&mut out, &current);
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    push_trimmed(&mut out, &current);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(text: &str, unit: UnitKind) -> Vec<String> {
        split_units(text, unit, &ChunkingParams::default())
            .unwrap()
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    }

    #[test]
    fn examples() {
        assert_eq!(texts("A. B.", UnitKind::Sentence), ["A.", "B."]);
        assert_eq!(texts("a\n\nb", UnitKind::Paragraph), ["a", "b"]);
        for unit in [UnitKind::Sentence, UnitKind::Paragraph, UnitKind::Passage] {
            assert!(texts("", unit).is_empty());
        }
    }

    #[test]
    fn sentence_rule_edges() {
        assert_eq!(texts("e.g. this stays. Next one?! Yes", UnitKind::Sentence), [
            "e.g. this stays.",
            "Next one?!",
            "Yes"
        ]);
        assert_eq!(texts("Version 2.5 shipped. ok then.", UnitKind::Sentence), ["Version 2.5 shipped. ok then."]);
        assert_eq!(texts("Über. Ärger!  ", UnitKind::Sentence), ["Über.", "Ärger!"]);
    }

    #[test]
    fn paragraphs_keep_inner_lines() {
        assert_eq!(texts("l1\nl2\n \n\n\nl3", UnitKind::Paragraph), ["l1\nl2", "l3"]);
    }

    #[test]
    fn passages_follow_chunking() {
        let p = ChunkingParams {
            chunk_size: 4,
            overlap: 2,
            snap_to_word_boundary: false,
        };
        let units = split_units("abcdef", UnitKind::Passage, &p).unwrap();
        assert_eq!(units, vec![(0, "abcd".to_string()), (1, "cdef".to_string())]);
    }
}
