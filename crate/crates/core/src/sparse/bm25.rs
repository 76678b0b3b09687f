use serde::{Deserialize, Serialize};

/// Okapi BM25 tuning: `k1` controls term-frequency saturation, `b` length
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn is_valid(&self) -> bool {
        self.k1 >= 0.0 && (0.0..=1.0).contains(&self.b)
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; always positive.
pub fn idf(doc_count: u64, df: u64) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Contribution of one query term with frequency `tf` in a document of
/// length `dl`.
pub fn term_score(tf: u32, dl: u32, avgdl: f64, idf: f64, params: &Bm25Params) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let tf = tf as f64;
    let norm = if avgdl > 0.0 {
        1.0 - params.b + params.b * dl as f64 / avgdl
    } else {
        1.0
    };
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}
