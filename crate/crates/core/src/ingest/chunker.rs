use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingParams {
    /// Window width in characters.
    pub chunk_size: usize,
    /// Characters shared by consecutive windows.
    pub overlap: usize,
    pub snap_to_word_boundary: bool,
}

impl Default for ChunkingParams {
    fn default() -> Self {
        ChunkingParams {
            chunk_size: 500,
            overlap: 50,
            snap_to_word_boundary: true,
        }
    }
}

impl ChunkingParams {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.chunk_size == 0 {
            return Err(IngestError::InvalidParams("chunk_size must be at least 1".into()));
        }
        if self.overlap >= self.chunk_size {
            return Err(IngestError::InvalidParams(format!(
                "overlap ({}) must be smaller than chunk_size ({})",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }
}

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    /// The text of this span, with offsets counted in characters.
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start).unwrap_or(text.len());
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1).unwrap_or(text.len())
        };
        &text[start..end]
    }
}

/// Sliding-window chunking over characters.
///
/// Non-final windows may retreat to the last whitespace at or before their
/// nominal end, never closer than one character to their start. The next
/// window starts `overlap` characters before the previous end, so the spans
/// always cover the text without gaps.
pub fn chunk_text(text: &str, params: &ChunkingParams) -> Result<Vec<Span>, IngestError> {
    params.validate()?;
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let nominal_end = start + params.chunk_size;
        if nominal_end >= len {
            spans.push(Span { start, end: len });
            break;
        }
        let mut end = nominal_end;
        if params.snap_to_word_boundary {
            if let Some(p) = (start + 1..=nominal_end).rev().find(|&p| chars[p].is_whitespace()) {
                end = p;
            }
        }
        spans.push(Span { start, end });
        start = end.saturating_sub(params.overlap).max(start + 1);
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(chunk_size: usize, overlap: usize, snap: bool) -> ChunkingParams {
        ChunkingParams {
            chunk_size,
            overlap,
            snap_to_word_boundary: snap,
        }
    }

    /// Reference sliding window without snapping.
    fn naive_windows(len: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut s = 0;
        loop {
            if len == 0 {
                break;
            }
            let e = (s + size).min(len);
            out.push((s, e));
            if e == len {
                break;
            }
            s += size - overlap;
        }
        out
    }

    #[test]
    fn empty_text_has_no_spans() {
        assert!(chunk_text("", &ChunkingParams::default()).unwrap().is_empty());
    }

    #[test]
    fn short_text_is_one_span() {
        let spans = chunk_text("0123456789", &ChunkingParams::default()).unwrap();
        assert_eq!(spans, vec![Span { start: 0, end: 10 }]);
    }

    #[test]
    fn sliding_window_without_snap() {
        let text = "abcdef";
        let spans = chunk_text(text, &params(4, 2, false)).unwrap();
        let got: Vec<_> = spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(got, naive_windows(6, 4, 2));
        assert_eq!(got, vec![(0, 4), (2, 6)]);
        let texts: Vec<_> = spans.iter().map(|s| s.slice(text)).collect();
        assert_eq!(texts, vec!["abcd", "cdef"]);
    }

    #[test]
    fn snapping_avoids_mid_word_cuts() {
        let text = "alpha beta gamma delta";
        let spans = chunk_text(text, &params(8, 0, true)).unwrap();
        let texts: Vec<_> = spans.iter().map(|s| s.slice(text)).collect();
        assert_eq!(texts, vec!["alpha", " beta", " gamma", " delta"]);
    }

    #[test]
    fn snapping_without_whitespace_falls_back_to_nominal_end() {
        let spans = chunk_text("abcdefghij", &params(4, 1, true)).unwrap();
        assert_eq!(spans[0], Span { start: 0, end: 4 });
        assert_eq!(spans.last().unwrap().end, 10);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(chunk_text("x", &params(0, 0, true)).is_err());
        assert!(chunk_text("x", &params(4, 4, true)).is_err());
    }

    #[test]
    fn multibyte_offsets_are_characters() {
        let text = "héllo wörld ünïcode";
        let spans = chunk_text(text, &params(7, 2, true)).unwrap();
        for s in &spans {
            assert_eq!(s.slice(text).chars().count(), s.end - s.start);
        }
        assert_eq!(spans.last().unwrap().end, text.chars().count());
    }

    fn reconstruct(text: &str, spans: &[Span]) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::new();
        let mut covered = 0;
        for s in spans {
            assert!(s.start <= covered, "gap before {s:?}");
            if s.end > covered {
                out.extend(&chars[covered..s.end]);
                covered = s.end;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn spans_cover_text_exactly(
            text in "[a-z é\n]{0,300}",
            size in 1usize..60,
            overlap_frac in 0.0f64..1.0,
            snap in any::<bool>(),
        ) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let overlap = overlap.min(size - 1);
            let spans = chunk_text(&text, &params(size, overlap, snap)).unwrap();
            let len = text.chars().count();
            if len == 0 {
                prop_assert!(spans.is_empty());
            } else {
                prop_assert_eq!(spans.last().unwrap().end, len);
                for s in &spans {
                    prop_assert!(s.start < s.end && s.end <= len);
                    prop_assert!(s.end - s.start <= size);
                }
                for w in spans.windows(2) {
                    prop_assert!(w[1].start > w[0].start);
                }
                prop_assert_eq!(reconstruct(&text, &spans), text);
            }
        }
    }
}
