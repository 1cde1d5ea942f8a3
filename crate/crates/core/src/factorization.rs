//! The NMF core: factor storage, the squared reconstruction loss, projected
//! SGD updates, and fold-in inference for unseen documents.
//!
//! The shared factor `W` (tokens x topics) and the per-client factor `H`
//! (topics x documents) approximate the count matrix as `A ≈ W·H`.
//! Non-negativity is maintained by projecting after every gradient step.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::CountMatrix;
use crate::mi::{self, MiCritic, MiError};

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch of {b} columns is too small for the MI term; need at least 2")]
    BatchTooSmall { b: usize },
    #[error("lambda > 0 requires a critic")]
    MissingCritic,
    #[error("factor checkpoint is malformed: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The globally shared token-topic factor `W`, dense `V x k`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    v: usize,
    k: usize,
    w: Vec<f64>,
}

impl TopicModel {
    /// Entries i.i.d. uniform on `[0, scale)`.
    pub fn init(v: usize, k: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(v >= 1 && k >= 1 && scale > 0.0);
        let w = (0..v * k).map(|_| rng.gen_range(0.0..scale)).collect();
        Self { v, k, w }
    }

    pub fn from_vec(v: usize, k: usize, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), v * k);
        Self { v, k, w }
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn entry(&self, token: usize, topic: usize) -> f64 {
        self.w[token * self.k + topic]
    }

    /// One topic's weight over all tokens.
    pub fn topic_column(&self, topic: usize) -> Vec<f64> {
        (0..self.v).map(|i| self.w[i * self.k + topic]).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Writes the checkpoint: header `V k`, then `V` rows of `k` entries.
    pub fn save(&self, path: &Path) -> Result<(), FactorError> {
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{} {}", self.v, self.k)?;
        for row in self.w.chunks(self.k) {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FactorError> {
        let text = fs::read_to_string(path)?;
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| -> Result<f64, FactorError> {
            tokens
                .next()
                .ok_or_else(|| FactorError::MalformedCheckpoint(format!("missing {what}")))?
                .parse()
                .map_err(|_| FactorError::MalformedCheckpoint(format!("unparseable {what}")))
        };
        let v = next("V")? as usize;
        let k = next("k")? as usize;
        let mut w = Vec::with_capacity(v * k);
        for _ in 0..v * k {
            w.push(next("entry")?);
        }
        if tokens.next().is_some() {
            return Err(FactorError::MalformedCheckpoint("trailing data".into()));
        }
        Ok(Self { v, k, w })
    }
}

/// A client's private topic-document factor `H`, dense `k x N`, stored
/// column-major so each document's topic-weight vector is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientFactors {
    k: usize,
    n: usize,
    h: Vec<f64>,
}

impl ClientFactors {
    /// Entries i.i.d. uniform on `[0, scale)`.
    pub fn init(k: usize, n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(k >= 1 && n >= 1 && scale > 0.0);
        let h = (0..k * n).map(|_| rng.gen_range(0.0..scale)).collect();
        Self { k, n, h }
    }

    pub fn from_vec(k: usize, n: usize, h: Vec<f64>) -> Self {
        assert_eq!(h.len(), k * n);
        Self { k, n, h }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.h[j * self.k..(j + 1) * self.k]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.h[j * self.k..(j + 1) * self.k]
    }

    pub fn min_entry(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    /// Learning rate.
    pub eta: f64,
    /// MI regularizer weight; 0 trains plain NMF.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { eta: 0.05, lambda: 0.1, batch_size: 64, epochs: 20 }
    }
}

/// Samples `(W, H)` for a `v x n` matrix with `k` topics from one stream
/// (`W` first, then `H`).
pub fn init_factors(
    v: usize,
    k: usize,
    n: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (TopicModel, ClientFactors) {
    let w = TopicModel::init(v, k, scale, rng);
    let h = ClientFactors::init(k, n, scale, rng);
    (w, h)
}

/// Initialization scale that puts the entries of `W·H` on the scale of `A`:
/// `sqrt(mean(A) / k)`.
pub fn init_scale(matrix: &CountMatrix, k: usize) -> f64 {
    (matrix.mean_entry() / k as f64).sqrt().max(f64::MIN_POSITIVE)
}

fn check_dims(w: &TopicModel, h: &ClientFactors, a: &CountMatrix, batch: &[usize]) -> Result<(), FactorError> {
    if w.v != a.v() {
        return Err(FactorError::DimensionMismatch(format!(
            "W has {} rows, A has {}",
            w.v,
            a.v()
        )));
    }
    if w.k != h.k {
        return Err(FactorError::DimensionMismatch(format!(
            "W has {} topics, H has {}",
            w.k, h.k
        )));
    }
    if batch.is_empty() {
        return Err(FactorError::EmptyBatch);
    }
    if let Some(&j) = batch.iter().find(|&&j| j >= a.n() || j >= h.n) {
        return Err(FactorError::DimensionMismatch(format!(
            "batch column {j} out of range (A has {}, H has {})",
            a.n(),
            h.n
        )));
    }
    Ok(())
}

/// Dense residual `a_j - W h_j` into `out`.
fn residual(w: &TopicModel, h_col: &[f64], a: &CountMatrix, j: usize, out: &mut [f64]) {
    for (i, r) in out.iter_mut().enumerate() {
        let row = &w.w[i * w.k..(i + 1) * w.k];
        let mut acc = 0.0;
        for (wv, hv) in row.iter().zip(h_col) {
            acc += wv * hv;
        }
        *r = -acc;
    }
    for &(i, c) in a.column(j) {
        out[i as usize] += c;
    }
}

/// Mean squared reconstruction error over the batch columns:
/// `(1/B) * sum_j ||a_j - W h_j||^2`.
pub fn reconstruction_loss(
    w: &TopicModel,
    h: &ClientFactors,
    a: &CountMatrix,
    batch: &[usize],
) -> Result<f64, FactorError> {
    check_dims(w, h, a, batch)?;
    let mut resid = vec![0.0; w.v];
    let mut loss = 0.0;
    for &j in batch {
        residual(w, h.column(j), a, j, &mut resid);
        loss += resid.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(loss / batch.len() as f64)
}

/// Gradients of the total batch loss
/// `(1/B) sum_j ||a_j - W h_j||^2 - lambda * I(batch)`
/// with respect to `W` (full `V x k`) and the batch columns of `H`
/// (column `bi` of the batch at `grad_h[bi*k .. (bi+1)*k]`).
///
/// The MI term reaches only `H`; the critic scores (count, topic-weight)
/// pairs, so `W` is not an input to it.
pub fn loss_gradients(
    w: &TopicModel,
    h: &ClientFactors,
    a: &CountMatrix,
    batch: &[usize],
    lambda: f64,
    critic: Option<&MiCritic>,
) -> Result<(Vec<f64>, Vec<f64>), FactorError> {
    check_dims(w, h, a, batch)?;
    let b = batch.len();
    let coef = 2.0 / b as f64;
    let mut grad_w = vec![0.0; w.v * w.k];
    let mut grad_h = vec![0.0; b * w.k];
    let mut resid = vec![0.0; w.v];
    for (bi, &j) in batch.iter().enumerate() {
        let h_col = h.column(j);
        residual(w, h_col, a, j, &mut resid);
        for (i, &r) in resid.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let row = &mut grad_w[i * w.k..(i + 1) * w.k];
            let scaled = coef * r;
            for (g, &hv) in row.iter_mut().zip(h_col) {
                *g -= scaled * hv;
            }
        }
        let gh = &mut grad_h[bi * w.k..(bi + 1) * w.k];
        for (i, &r) in resid.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let row = &w.w[i * w.k..(i + 1) * w.k];
            let scaled = coef * r;
            for (g, &wv) in gh.iter_mut().zip(row) {
                *g -= scaled * wv;
            }
        }
    }
    if lambda > 0.0 {
        let critic = critic.ok_or(FactorError::MissingCritic)?;
        if b < 2 {
            return Err(FactorError::BatchTooSmall { b });
        }
        let (_, gh_mi) = mi::smile_gradient_parts(critic, a, h, batch, false, true)?;
        let gh_mi = gh_mi.expect("requested");
        for (g, mi_g) in grad_h.iter_mut().zip(&gh_mi) {
            // Loss carries -lambda * I, so the loss gradient gets -lambda
            // times the estimator gradient.
            *g -= lambda * mi_g;
        }
    }
    Ok((grad_w, grad_h))
}

/// Entrywise `max(x, 0)` in place.
pub fn project_nonneg(values: &mut [f64]) {
    for x in values {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// One projected SGD step at rate `config.eta` on `W` and the batch columns
/// of `H`.
pub fn sgd_step(
    w: &mut TopicModel,
    h: &mut ClientFactors,
    a: &CountMatrix,
    batch: &[usize],
    config: &SgdConfig,
    critic: Option<&MiCritic>,
) -> Result<(), FactorError> {
    let (grad_w, grad_h) = loss_gradients(w, h, a, batch, config.lambda, critic)?;
    for (x, g) in w.w.iter_mut().zip(&grad_w) {
        *x -= config.eta * g;
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let k = w.k;
    for (bi, &j) in batch.iter().enumerate() {
        let col = h.column_mut(j);
        for (x, g) in col.iter_mut().zip(&grad_h[bi * k..(bi + 1) * k]) {
            *x -= config.eta * g;
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    Ok(())
}

/// Folds one unseen document into the topic space: projected gradient
/// descent on `||a - W h||^2` with `W` fixed, from a uniform start.
pub fn infer_topics(w: &TopicModel, a_col: &[(u32, f64)], iters: usize, eta: f64) -> Vec<f64> {
    assert!(iters >= 1);
    let k = w.k;
    let mut h = vec![1.0 / k as f64; k];
    let mut resid = vec![0.0; w.v];
    for _ in 0..iters {
        for (i, r) in resid.iter_mut().enumerate() {
            let row = &w.w[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for (wv, hv) in row.iter().zip(&h) {
                acc += wv * hv;
            }
            *r = -acc;
        }
        for &(i, c) in a_col {
            resid[i as usize] += c;
        }
        for (t, ht) in h.iter_mut().enumerate() {
            let mut g = 0.0;
            for (i, &r) in resid.iter().enumerate() {
                g -= 2.0 * w.w[i * k + t] * r;
            }
            *ht -= eta * g;
            if *ht < 0.0 {
                *ht = 0.0;
            }
        }
    }
    h
}

/// Safe fold-in step size for a given `W`: half the inverse of the squared
/// Frobenius norm, which bounds the curvature of the fold-in objective.
pub fn infer_step_size(w: &TopicModel) -> f64 {
    let sq: f64 = w.w.iter().map(|x| x * x).sum();
    0.5 / sq.max(f64::MIN_POSITIVE)
}
