//! Text classification: nearest-centroid few-shot over embeddings, and a
//! tf-idf one-vs-rest logistic regression trained by full-batch gradient
//! descent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dense::{EmbedError, Embedder, EmbeddingVector};
use crate::sparse::analyzer::terms;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no training examples")]
    EmptyExamples,
    #[error("training data has a single class '{0}'; at least two are required")]
    SingleClass(String),
    #[error("label is empty")]
    EmptyLabel,
    #[error("class '{label}' has {found} examples, at least {required} required")]
    TooFewExamples { label: String, found: usize, required: usize },
    #[error("every example of class '{0}' embeds to the zero vector")]
    ZeroCentroid(String),
    #[error("vector dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model was trained with embedder {model}, runtime embedder is {runtime}")]
    EmbedderMismatch { model: String, runtime: String },
    #[error("this operation needs a {0} model")]
    WrongKind(&'static str),
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    CentroidFewshot {
        /// Fingerprint of the embedder the centroids live in.
        embedder: String,
        /// Unit length, parallel to `classes`.
        centroids: Vec<Vec<f32>>,
    },
    TfidfLinear {
        /// Sorted.
        vocabulary: Vec<String>,
        idf: Vec<f64>,
        /// One row per class, one column per vocabulary term.
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTextModel {
    /// Sorted, at least two.
    pub classes: Vec<String>,
    #[serde(flatten)]
    pub params: ModelParams,
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    /// Parallel to the model's classes.
    pub scores: Vec<ClassScore>,
}

fn class_index(labels: impl IntoIterator<Item = String>, min_per_class: usize) -> Result<Vec<String>, ClassifyError> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        if l.trim().is_empty() {
            return Err(ClassifyError::EmptyLabel);
        }
        *counts.entry(l).or_default() += 1;
    }
    match counts.len() {
        0 => return Err(ClassifyError::EmptyExamples),
        1 => return Err(ClassifyError::SingleClass(counts.into_keys().next().unwrap())),
        _ => {}
    }
    if let Some((label, &found)) = counts.iter().find(|(_, &n)| n < min_per_class) {
        return Err(ClassifyError::TooFewExamples {
            label: label.clone(),
            found,
            required: min_per_class,
        });
    }
    Ok(counts.into_keys().collect())
}

/// Nearest-centroid model over pre-computed vectors. `embedder` is the
/// fingerprint of the space the vectors came from.
pub fn train_centroid(examples: &[(EmbeddingVector, String)], embedder: &str) -> Result<LinearTextModel, ClassifyError> {
    let classes = class_index(examples.iter().map(|(_, l)| l.clone()), 1)?;
    let dim = examples[0].0.dim();
    let mut sums = vec![vec![0.0f64; dim]; classes.len()];
    for (v, label) in examples {
        if v.dim() != dim {
            return Err(ClassifyError::DimensionMismatch { expected: dim, found: v.dim() });
        }
        let c = classes.binary_search(label).expect("label indexed");
        let n = v.norm();
        if n > 0.0 {
            for (s, &x) in sums[c].iter_mut().zip(&v.0) {
                *s += x as f64 / n;
            }
        }
    }
    let mut centroids = Vec::with_capacity(classes.len());
    for (label, sum) in classes.iter().zip(sums) {
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ClassifyError::ZeroCentroid(label.clone()));
        }
        centroids.push(sum.iter().map(|x| (x / norm) as f32).collect());
    }
    Ok(LinearTextModel {
        classes,
        params: ModelParams::CentroidFewshot {
            embedder: embedder.to_string(),
            centroids,
        },
        training_meta: TrainingMeta {
            seed: 0,
            epochs: 0,
            learning_rate: 0.0,
        },
    })
}

/// Embeds `(text, label)` examples and trains [`train_centroid`].
pub fn train_fewshot(examples: &[(String, String)], embedder: &dyn Embedder) -> Result<LinearTextModel, ClassifyError> {
    class_index(examples.iter().map(|(_, l)| l.clone()), 1)?;
    let texts: Vec<&str> = examples.iter().map(|(t, _)| t.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    let labelled: Vec<(EmbeddingVector, String)> = vectors.into_iter().zip(examples.iter().map(|(_, l)| l.clone())).collect();
    train_centroid(&labelled, &embedder.spec().fingerprint())
}

/// Dense tf-idf row over `vocabulary`, L2-normalized; unknown terms are
/// ignored and an all-unknown text gives the zero row.
pub fn tfidf_features(text: &str, vocabulary: &[String], idf: &[f64]) -> Vec<f64> {
    let mut row = vec![0.0; vocabulary.len()];
    for t in terms(text) {
        if let Ok(i) = vocabulary.binary_search(&t) {
            row[i] += 1.0;
        }
    }
    for (x, w) in row.iter_mut().zip(idf) {
        *x *= w;
    }
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|x| *x /= norm);
    }
    row
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Training objective of the one-vs-rest logistic model: the sum over
/// classes of mean binary cross-entropy, no regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProblem {
    pub features: Vec<Vec<f64>>,
    /// Class index per row.
    pub targets: Vec<usize>,
    pub n_classes: usize,
}

impl LogisticProblem {
    fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn loss(&self, weights: &[Vec<f64>], biases: &[f64]) -> f64 {
        let n = self.features.len() as f64;
        let mut total = 0.0;
        for (x, &t) in self.features.iter().zip(&self.targets) {
            for c in 0..self.n_classes {
                let z = dot(&weights[c], x) + biases[c];
                let y = if c == t { 1.0 } else { 0.0 };
                // ln(1 + e^z) - y z, stable for large |z|
                total += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            }
        }
        total / n
    }

    /// Returns `(d loss / d weights, d loss / d biases)`.
    pub fn gradient(&self, weights: &[Vec<f64>], biases: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.features.len() as f64;
        let mut gw = vec![vec![0.0; self.dim()]; self.n_classes];
        let mut gb = vec![0.0; self.n_classes];
        for (x, &t) in self.features.iter().zip(&self.targets) {
            for c in 0..self.n_classes {
                let p = sigmoid(dot(&weights[c], x) + biases[c]);
                let r = (p - if c == t { 1.0 } else { 0.0 }) / n;
                gb[c] += r;
                for (g, xi) in gw[c].iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
        }
        (gw, gb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Vocabulary (sorted), idf and the training problem for `dataset`.
pub fn tfidf_problem(dataset: &[(String, String)], classes: &[String]) -> (Vec<String>, Vec<f64>, LogisticProblem) {
    let docs: Vec<BTreeSet<String>> = dataset.iter().map(|(t, _)| terms(t).into_iter().collect()).collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        for t in d {
            *df.entry(t.as_str()).or_default() += 1;
        }
    }
    let n = dataset.len() as f64;
    let vocabulary: Vec<String> = df.keys().map(|t| t.to_string()).collect();
    let idf: Vec<f64> = df.values().map(|&d| (n / d as f64).ln() + 1.0).collect();
    let features = dataset.iter().map(|(t, _)| tfidf_features(t, &vocabulary, &idf)).collect();
    let targets = dataset
        .iter()
        .map(|(_, l)| classes.binary_search(l).expect("label indexed"))
        .collect();
    let problem = LogisticProblem {
        features,
        targets,
        n_classes: classes.len(),
    };
    (vocabulary, idf, problem)
}

/// Trains from zero weights with `epochs` full-batch gradient steps.
/// Deterministic; `seed` is recorded in the model and feeds its id.
pub fn train_tfidf_linear(
    dataset: &[(String, String)],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<LinearTextModel, ClassifyError> {
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(ClassifyError::InvalidParams(format!("learning_rate must be positive, got {learning_rate}")));
    }
    let classes = class_index(dataset.iter().map(|(_, l)| l.clone()), 2)?;
    let (vocabulary, idf, problem) = tfidf_problem(dataset, &classes);
    let mut weights = vec![vec![0.0; vocabulary.len()]; classes.len()];
    let mut biases = vec![0.0; classes.len()];
    for _ in 0..epochs {
        let (gw, gb) = problem.gradient(&weights, &biases);
        for (w, g) in weights.iter_mut().zip(&gw) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= learning_rate * gi;
            }
        }
        for (b, g) in biases.iter_mut().zip(&gb) {
            *b -= learning_rate * g;
        }
    }
    Ok(LinearTextModel {
        classes,
        params: ModelParams::TfidfLinear {
            vocabulary,
            idf,
            weights,
            biases,
        },
        training_meta: TrainingMeta {
            seed,
            epochs,
            learning_rate,
        },
    })
}

fn argmax(classes: &[String], scores: Vec<f64>) -> Prediction {
    // Classes are sorted, so a strict comparison keeps the first label on ties.
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Prediction {
        label: classes[best].clone(),
        scores: classes
            .iter()
            .zip(scores)
            .map(|(l, score)| ClassScore { label: l.clone(), score })
            .collect(),
    }
}

/// Classifies an embedding with a centroid model.
pub fn predict_vector(model: &LinearTextModel, v: &EmbeddingVector) -> Result<Prediction, ClassifyError> {
    let ModelParams::CentroidFewshot { centroids, .. } = &model.params else {
        return Err(ClassifyError::WrongKind("centroid_fewshot"));
    };
    let expected = centroids.first().map_or(0, Vec::len);
    if v.dim() != expected {
        return Err(ClassifyError::DimensionMismatch { expected, found: v.dim() });
    }
    let scores = centroids
        .iter()
        .map(|c| v.cosine(&EmbeddingVector(c.clone())))
        .collect();
    Ok(argmax(&model.classes, scores))
}

impl LinearTextModel {
    pub fn kind(&self) -> &'static str {
        match self.params {
            ModelParams::CentroidFewshot { .. } => "centroid_fewshot",
            ModelParams::TfidfLinear { .. } => "tfidf_linear",
        }
    }

    /// Checks the shape invariants; run on every deserialized model.
    pub fn validate(&self) -> Result<(), ClassifyError> {
        let bad = |m: &str| Err(ClassifyError::Malformed(m.into()));
        if self.classes.len() < 2 {
            return bad("fewer than two classes");
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("classes not strictly sorted");
        }
        let k = self.classes.len();
        match &self.params {
            ModelParams::CentroidFewshot { centroids, .. } => {
                if centroids.len() != k {
                    return bad("centroid count differs from class count");
                }
                let dim = centroids[0].len();
                if centroids.iter().any(|c| c.len() != dim) {
                    return bad("centroids differ in dimension");
                }
            }
            ModelParams::TfidfLinear {
                vocabulary,
                idf,
                weights,
                biases,
            } => {
                if vocabulary.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("vocabulary not strictly sorted");
                }
                if idf.len() != vocabulary.len() {
                    return bad("idf length differs from vocabulary");
                }
                if weights.len() != k || biases.len() != k {
                    return bad("weight rows differ from class count");
                }
                if weights.iter().any(|w| w.len() != vocabulary.len()) {
                    return bad("weight row length differs from vocabulary");
                }
            }
        }
        Ok(())
    }

    /// Centroid models need the embedder they were trained with; tf-idf
    /// models ignore `embedder`.
    pub fn predict(&self, text: &str, embedder: Option<&dyn Embedder>) -> Result<Prediction, ClassifyError> {
        match &self.params {
            ModelParams::CentroidFewshot { embedder: trained, .. } => {
                let e = embedder.ok_or(ClassifyError::InvalidParams(
                    "a centroid model needs an embedder to predict".into(),
                ))?;
                let runtime = e.spec().fingerprint();
                if &runtime != trained {
                    return Err(ClassifyError::EmbedderMismatch {
                        model: trained.clone(),
                        runtime,
                    });
                }
                predict_vector(self, &e.embed(text)?)
            }
            ModelParams::TfidfLinear {
                vocabulary,
                idf,
                weights,
                biases,
            } => {
                let x = tfidf_features(text, vocabulary, idf);
                let scores = weights
                    .iter()
                    .zip(biases)
                    .map(|(w, b)| sigmoid(dot(w, &x) + b))
                    .collect();
                Ok(argmax(&self.classes, scores))
            }
        }
    }
}

/// Reproducible id: a content hash of the model kind, the training
/// examples in order, the training parameters and the embedder fingerprint.
pub fn model_id(kind: &str, examples: &[(String, String)], meta: &TrainingMeta, embedder: Option<&str>) -> String {
    let canonical = serde_json::json!({
        "kind": kind,
        "examples": examples,
        "training_meta": meta,
        "embedder": embedder,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(&digest[..16])
}
