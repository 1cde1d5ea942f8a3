//! Topic quality measurement: embedding-based coherence of each topic's top
//! words, and downstream document classification on topic-weight features.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::factorization::TopicModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("only {found} of the words have embeddings; coherence needs at least 2")]
    TooFewEmbeddedWords { found: usize },
    #[error("no topic has two or more embedded top words")]
    NoScorableTopics,
    #[error("embedding file has no usable entries")]
    EmptyTable,
    #[error("embedding file declares no dimensions on its first entry")]
    InconsistentDimension,
    #[error("classification needs at least two classes")]
    SingleClass,
    #[error("split ratio {ratio} leaves an empty side for {n} feature vectors")]
    DegenerateSplit { ratio: f64, n: usize },
    #[error("feature vectors and labels disagree: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word-embedding lookup table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Lines dropped while parsing (wrong arity or unparseable numbers).
    pub skipped_lines: usize,
}

impl EmbeddingTable {
    pub fn from_entries(entries: &[(&str, Vec<f64>)]) -> Self {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let vectors = entries
            .iter()
            .map(|(w, v)| {
                assert_eq!(v.len(), dim);
                (w.to_lowercase(), v.clone())
            })
            .collect();
        Self { dim, vectors, skipped_lines: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(|v| v.as_slice())
    }
}

/// Parses the text embedding format `word v1 ... vd`, one entry per line.
/// The dimension is inferred from the first line; lines with a different
/// arity or unparseable numbers are skipped and counted. Duplicate words
/// keep the last occurrence. Words are lowercased at load.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut dim = 0usize;
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = match parts.next() {
            Some(w) => w,
            None => continue,
        };
        let values: Option<Vec<f64>> = parts.map(|p| p.parse().ok()).collect();
        match values {
            Some(values) if !values.is_empty() => {
                if dim == 0 {
                    dim = values.len();
                }
                if values.len() == dim {
                    vectors.insert(word.to_lowercase(), values);
                } else {
                    skipped += 1;
                }
            }
            _ => {
                if dim == 0 && vectors.is_empty() {
                    // The first entry fixes the dimension; a wordless or
                    // numberless first line cannot.
                    return Err(EvalError::InconsistentDimension);
                }
                skipped += 1;
            }
        }
    }
    if vectors.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    Ok(EmbeddingTable { dim, vectors, skipped_lines: skipped })
}

/// The `n` heaviest vocabulary terms of one topic, ties broken by ascending
/// term index.
pub fn top_words(w: &TopicModel, topic: usize, n: usize, vocab: &Vocabulary) -> Vec<String> {
    assert!(n >= 1 && n <= vocab.len());
    assert_eq!(w.v(), vocab.len());
    let mut order: Vec<usize> = (0..w.v()).collect();
    order.sort_by(|&a, &b| {
        w.entry(b, topic)
            .partial_cmp(&w.entry(a, topic))
            .expect("factor weights are finite")
            .then(a.cmp(&b))
    });
    order.truncate(n);
    order.into_iter().map(|i| vocab.term(i).to_string()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Mean pairwise cosine similarity of the words found in the table; words
/// without an embedding are skipped and the pair count adjusts.
pub fn we_coherence(words: &[String], embeddings: &EmbeddingTable) -> Result<f64, EvalError> {
    let found: Vec<&[f64]> = words.iter().filter_map(|w| embeddings.get(w)).collect();
    let m = found.len();
    if m < 2 {
        return Err(EvalError::TooFewEmbeddedWords { found: m });
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            sum += cosine(found[i], found[j]);
        }
    }
    Ok(2.0 * sum / (m as f64 * (m - 1) as f64))
}

/// Per-topic coherence summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicSummary {
    pub index: usize,
    pub top_words: Vec<String>,
    /// `None` when fewer than two top words have embeddings; such topics are
    /// excluded from the mean.
    pub coherence: Option<f64>,
}

/// Coherence report over all topics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicReport {
    pub topics: Vec<TopicSummary>,
    pub mean_coherence: f64,
}

/// Scores every topic's top `n` words and averages over the scorable topics.
pub fn model_coherence(
    w: &TopicModel,
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
    n: usize,
) -> Result<TopicReport, EvalError> {
    assert!(w.k() >= 1);
    let mut topics = Vec::with_capacity(w.k());
    let mut sum = 0.0;
    let mut scored = 0usize;
    for topic in 0..w.k() {
        let words = top_words(w, topic, n, vocab);
        let coherence = match we_coherence(&words, embeddings) {
            Ok(c) => {
                sum += c;
                scored += 1;
                Some(c)
            }
            Err(EvalError::TooFewEmbeddedWords { .. }) => None,
            Err(e) => return Err(e),
        };
        topics.push(TopicSummary { index: topic, top_words: words, coherence });
    }
    if scored == 0 {
        return Err(EvalError::NoScorableTopics);
    }
    Ok(TopicReport { topics, mean_coherence: sum / scored as f64 })
}

/// Per-class precision/recall/F1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Downstream classification quality on held-out topic-weight features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Exact-count accuracy.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty());
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

fn confusion_counts(predictions: &[usize], labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let classes = predictions
        .iter()
        .chain(labels)
        .copied()
        .max()
        .map_or(0, |m| m + 1);
    let mut counts = vec![(0usize, 0usize, 0usize); classes]; // (tp, fp, fn)
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            counts[p].0 += 1;
        } else {
            counts[p].1 += 1;
            counts[l].2 += 1;
        }
    }
    counts
}

/// Unweighted mean of per-class F1 over the classes that occur in the labels
/// or predictions; a class with undefined precision or recall scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty());
    let counts = confusion_counts(predictions, labels);
    let mut sum = 0.0;
    let mut classes = 0usize;
    for &(tp, fp, fnn) in &counts {
        if tp + fp + fnn == 0 {
            continue; // class absent from both sides
        }
        classes += 1;
        if tp > 0 {
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fnn) as f64;
            sum += 2.0 * p * r / (p + r);
        }
    }
    sum / classes as f64
}

fn per_class_metrics(predictions: &[usize], labels: &[usize]) -> Vec<ClassMetrics> {
    confusion_counts(predictions, labels)
        .iter()
        .enumerate()
        .filter(|(_, &(tp, fp, fnn))| tp + fp + fnn > 0)
        .map(|(class, &(tp, fp, fnn))| {
            let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let recall = if tp + fnn > 0 { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics { class, precision, recall, f1 }
        })
        .collect()
}

fn l2_normalize(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            let norm: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                f.clone()
            } else {
                f.iter().map(|x| x / norm).collect()
            }
        })
        .collect()
}

/// Multinomial logistic regression on L2-normalized features, trained with
/// full-batch gradient descent on a seeded `split_ratio` train split and
/// evaluated on the rest.
pub fn train_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    split_ratio: f64,
    seed: u64,
    epochs: usize,
    lr: f64,
) -> Result<ClassificationReport, EvalError> {
    if features.len() != labels.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    assert!(split_ratio > 0.0 && split_ratio < 1.0, "split_ratio must lie in (0, 1)");
    assert!(epochs >= 1 && lr > 0.0);
    let n = features.len();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; classes];
        for &l in labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(EvalError::SingleClass);
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(EvalError::ShapeMismatch("ragged feature vectors".into()));
    }

    let normalized = l2_normalize(features);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (split_ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(EvalError::DegenerateSplit { ratio: split_ratio, n });
    }
    let (train_idx, test_idx) = order.split_at(n_train);

    // Weights (dim + 1) x classes, bias as the extra row, zero-initialized.
    let mut weights = vec![0.0f64; (dim + 1) * classes];
    let mut probs = vec![0.0f64; classes];
    let mut grad = vec![0.0f64; (dim + 1) * classes];
    for _ in 0..epochs {
        grad.fill(0.0);
        for &i in train_idx {
            softmax_scores(&weights, &normalized[i], dim, classes, &mut probs);
            probs[labels[i]] -= 1.0;
            for (f, &x) in normalized[i].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut grad[f * classes..(f + 1) * classes];
                for (g, &p) in row.iter_mut().zip(&probs) {
                    *g += x * p;
                }
            }
            let bias_row = &mut grad[dim * classes..(dim + 1) * classes];
            for (g, &p) in bias_row.iter_mut().zip(&probs) {
                *g += p;
            }
        }
        let scale = lr / n_train as f64;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }

    let predictions: Vec<usize> = test_idx
        .iter()
        .map(|&i| {
            softmax_scores(&weights, &normalized[i], dim, classes, &mut probs);
            argmax(&probs)
        })
        .collect();
    let test_labels: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    Ok(ClassificationReport {
        macro_f1: macro_f1(&predictions, &test_labels),
        accuracy: accuracy(&predictions, &test_labels),
        per_class: per_class_metrics(&predictions, &test_labels),
        train_size: train_idx.len(),
        test_size: test_idx.len(),
    })
}

fn softmax_scores(weights: &[f64], feature: &[f64], dim: usize, classes: usize, out: &mut [f64]) {
    out.copy_from_slice(&weights[dim * classes..(dim + 1) * classes]);
    for (f, &x) in feature.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &weights[f * classes..(f + 1) * classes];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate() {
        if x > values[best] {
            best = i;
        }
    }
    best
}
