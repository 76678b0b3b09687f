use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::analyzer::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightOptions {
    /// Snippet width in characters.
    pub window: usize,
    pub pre: String,
    pub post: String,
}

impl Default for HighlightOptions {
    fn default() -> Self {
        HighlightOptions {
            window: 200,
            pre: "**".into(),
            post: "**".into(),
        }
    }
}

const ELLIPSIS: &str = "…";

/// Picks the `window`-character span holding the most distinct matched terms
/// (earliest on ties) and marks every matched token fully inside it.
pub fn highlight(text: &str, terms: &HashSet<String>, opts: &HighlightOptions) -> String {
    let chars: Vec<char> = text.chars().collect();
    let window = opts.window.max(1);
    let len = chars.len();
    let matches: Vec<_> = tokenize(text).into_iter().filter(|t| terms.contains(&t.term)).collect();

    let start = if len <= window || matches.is_empty() {
        0
    } else {
        best_window_start(&matches, len, window)
    };
    let end = (start + window).min(len);

    let mut out = String::new();
    if start > 0 {
        out.push_str(ELLIPSIS);
    }
    let mut cursor = start;
    for m in matches.iter().filter(|m| m.start >= start && m.end <= end) {
        out.extend(&chars[cursor..m.start]);
        out.push_str(&opts.pre);
        out.extend(&chars[m.start..m.end]);
        out.push_str(&opts.post);
        cursor = m.end;
    }
    out.extend(&chars[cursor..end]);
    if end < len {
        out.push_str(ELLIPSIS);
    }
    out
}

/// Scores each window start by the distinct terms fully contained in it.
/// Only starts where the contained set can change need checking: 0, and
/// the first start at which each match fits or stops fitting.
fn best_window_start(matches: &[super::analyzer::Token], len: usize, window: usize) -> usize {
    let last_start = len - window;
    let mut candidates: BTreeSet<usize> = BTreeSet::from([0]);
    for m in matches {
        // first start including m
        candidates.insert(m.end.saturating_sub(window).min(last_start));
        // first start excluding m
        if m.start < last_start {
            candidates.insert(m.start + 1);
        }
    }
    let mut best = (0usize, 0usize);
    for &s in &candidates {
        let distinct: HashSet<&str> = matches
            .iter()
            .filter(|m| m.start >= s && m.end <= s + window)
            .map(|m| m.term.as_str())
            .collect();
        if distinct.len() > best.1 {
            best = (s, distinct.len());
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ts: &[&str]) -> HashSet<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    fn opts(window: usize) -> HighlightOptions {
        HighlightOptions {
            window,
            ..Default::default()
        }
    }

    #[test]
    fn marks_match() {
        assert_eq!(
            highlight("hypersonic glide vehicles", &set(&["hypersonic"]), &opts(200)),
            "**hypersonic** glide vehicles"
        );
    }

    #[test]
    fn no_match_is_plain_prefix() {
        let text = "abcdefghij klmnop";
        assert_eq!(highlight(text, &set(&["zzz"]), &opts(5)), "abcde…");
        assert_eq!(highlight(text, &set(&[]), &opts(100)), text);
    }

    #[test]
    fn marks_every_occurrence() {
        assert_eq!(highlight("a b a", &set(&["a"]), &opts(10)), "**a** b **a**");
    }

    /// Exhaustive reference: every start position is scored.
    fn brute_force_start(text: &str, terms: &HashSet<String>, window: usize) -> usize {
        let len = text.chars().count();
        let toks: Vec<_> = tokenize(text).into_iter().filter(|t| terms.contains(&t.term)).collect();
        let mut best = (0, 0);
        for s in 0..=len.saturating_sub(window) {
            let n = toks
                .iter()
                .filter(|m| m.start >= s && m.end <= s + window)
                .map(|m| m.term.clone())
                .collect::<HashSet<_>>()
                .len();
            if n > best.1 {
                best = (s, n);
            }
        }
        best.0
    }

    #[test]
    fn densest_window_wins_over_exhaustive_scan() {
        // 200-char fixture: lone "alpha" early, "beta gamma" cluster late
        let mut text = String::from("alpha ");
        text.push_str(&"x".repeat(150));
        text.push_str(" beta gamma ");
        while text.chars().count() < 200 {
            text.push('y');
        }
        assert_eq!(text.chars().count(), 200);
        let terms = set(&["alpha", "beta", "gamma"]);
        for window in [12, 20, 40, 80] {
            let expected = brute_force_start(&text, &terms, window);
            let matches: Vec<_> = tokenize(&text).into_iter().filter(|t| terms.contains(&t.term)).collect();
            assert_eq!(best_window_start(&matches, 200, window), expected, "window {window}");
        }
        let snippet = highlight(&text, &terms, &opts(20));
        assert!(snippet.contains("**beta** **gamma**"), "{snippet}");
        assert!(snippet.starts_with(ELLIPSIS));
    }

    #[test]
    fn random_texts_match_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let words = ["aa", "bb", "cc", "dd", "filler", "z"];
        let terms = set(&["aa", "bb", "cc"]);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let text: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
            let text = text.join(" ");
            let window = rng.gen_range(1..30);
            let len = text.chars().count();
            if len <= window {
                continue;
            }
            let matches: Vec<_> = tokenize(&text).into_iter().filter(|t| terms.contains(&t.term)).collect();
            if matches.is_empty() {
                continue;
            }
            assert_eq!(
                best_window_start(&matches, len, window),
                brute_force_start(&text, &terms, window),
                "{text:?} window {window}"
            );
        }
    }
}
