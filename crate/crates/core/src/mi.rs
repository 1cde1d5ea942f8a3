//! Neural mutual-information estimation between count vectors and topic
//! weights.
//!
//! A small feed-forward critic scores (count-vector, topic-vector) pairs; the
//! clipped mini-batch lower bound contrasts matched pairs against all
//! mismatched pairs within the batch:
//!
//! ```text
//! I(S) = mean_j T(a_j, h_j)
//!      - ln( mean_{j != j'} clip(exp(T(a_j, h_j')), e^-tau, e^tau) )
//! ```
//!
//! The clip keeps the log term inside `[-tau, tau]`, so the estimate is
//! finite for any critic. Gradients are computed in closed form by
//! reverse-mode differentiation; the clip passes no gradient where it is
//! active.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::CountMatrix;
use crate::factorization::ClientFactors;

/// Hidden-layer widths of the default critic.
pub const HIDDEN1: usize = 32;
pub const HIDDEN2: usize = 256;

/// Default clip threshold.
pub const DEFAULT_TAU: f64 = 5.0;

#[derive(Debug, Error)]
pub enum MiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("batch of {b} columns is too small; the marginal term needs at least 2")]
    BatchTooSmall { b: usize },
    #[error("invalid clip bounds: lo {lo} exceeds hi {hi}")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("critic checkpoint is malformed: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The critic network: two ReLU hidden layers and a linear scalar head.
///
/// The input is the concatenation of a dense count vector (length `v`) and a
/// topic-weight vector (length `k`). Weight matrices are stored row-major as
/// `(input, output)`, so rows `0..v` of the first layer pair with the count
/// vector and rows `v..v+k` with the topic vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MiCritic {
    v: usize,
    k: usize,
    h1: usize,
    h2: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: f64,
    tau: f64,
}

impl MiCritic {
    /// All-zero critic with explicit hidden widths.
    pub fn zeros(v: usize, k: usize, h1: usize, h2: usize, tau: f64) -> Self {
        assert!(v >= 1 && k >= 1 && h1 >= 1 && h2 >= 1);
        assert!(tau > 0.0);
        Self {
            v,
            k,
            h1,
            h2,
            w1: vec![0.0; (v + k) * h1],
            b1: vec![0.0; h1],
            w2: vec![0.0; h1 * h2],
            b2: vec![0.0; h2],
            w3: vec![0.0; h2],
            b3: 0.0,
            tau,
        }
    }

    /// Glorot-uniform weights, zero biases, explicit widths.
    pub fn glorot(v: usize, k: usize, h1: usize, h2: usize, tau: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut critic = Self::zeros(v, k, h1, h2, tau);
        let s1 = (6.0 / (v + k + h1) as f64).sqrt();
        for w in &mut critic.w1 {
            *w = rng.gen_range(-s1..s1);
        }
        let s2 = (6.0 / (h1 + h2) as f64).sqrt();
        for w in &mut critic.w2 {
            *w = rng.gen_range(-s2..s2);
        }
        let s3 = (6.0 / (h2 + 1) as f64).sqrt();
        for w in &mut critic.w3 {
            *w = rng.gen_range(-s3..s3);
        }
        critic
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden_dims(&self) -> (usize, usize) {
        (self.h1, self.h2)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Total parameter count (weights and biases of all three layers).
    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + 1
    }

    /// Parameters flattened in the fixed order `w1, b1, w2, b2, w3, b3`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.w3);
        out.push(self.b3);
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut at = 0;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3] {
            let len = dst.len();
            dst.copy_from_slice(&params[at..at + len]);
            at += len;
        }
        self.b3 = params[at];
    }

    /// Adds `scale * delta` to the flat parameter vector in place.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.param_count());
        let mut at = 0;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3] {
            for x in dst.iter_mut() {
                *x += scale * delta[at];
                at += 1;
            }
        }
        self.b3 += scale * delta[at];
    }

    /// Layer-1 contribution of a sparse count column (bias excluded).
    fn pre_a_sparse(&self, col: &[(u32, f64)], out: &mut [f64]) {
        out.fill(0.0);
        for &(i, c) in col {
            let row = &self.w1[i as usize * self.h1..(i as usize + 1) * self.h1];
            for (o, w) in out.iter_mut().zip(row) {
                *o += c * w;
            }
        }
    }

    /// Layer-1 contribution of a dense topic column (bias excluded).
    fn pre_h_dense(&self, h_col: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (t, &x) in h_col.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w1[(self.v + t) * self.h1..(self.v + t + 1) * self.h1];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }

    /// Forward pass from precomputed layer-1 parts; fills the hidden
    /// activations and returns the score.
    fn forward_from_pre(&self, pre_a: &[f64], pre_h: &[f64], z1: &mut [f64], z2: &mut [f64]) -> f64 {
        for (o, z) in z1.iter_mut().enumerate() {
            let x = pre_a[o] + pre_h[o] + self.b1[o];
            *z = if x > 0.0 { x } else { 0.0 };
        }
        z2.copy_from_slice(&self.b2);
        for (o, &x) in z1.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w2[o * self.h2..(o + 1) * self.h2];
            for (z, w) in z2.iter_mut().zip(row) {
                *z += x * w;
            }
        }
        let mut score = self.b3;
        for (z, w) in z2.iter_mut().zip(&self.w3) {
            if *z > 0.0 {
                score += *z * w;
            } else {
                *z = 0.0;
            }
        }
        score
    }

    /// Writes the checkpoint: a `v k tau` header, then per layer a
    /// `rows cols` line, `rows` lines of row-major weights, and a bias line.
    pub fn save(&self, path: &Path) -> Result<(), MiError> {
        let mut out = String::new();
        out.push_str(&format!("{} {} {}\n", self.v, self.k, self.tau));
        write_layer(&mut out, self.v + self.k, self.h1, &self.w1, &self.b1);
        write_layer(&mut out, self.h1, self.h2, &self.w2, &self.b2);
        write_layer(&mut out, self.h2, 1, &self.w3, &[self.b3]);
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MiError> {
        let text = fs::read_to_string(path)?;
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| -> Result<f64, MiError> {
            tokens
                .next()
                .ok_or_else(|| MiError::MalformedCheckpoint(format!("missing {what}")))?
                .parse()
                .map_err(|_| MiError::MalformedCheckpoint(format!("unparseable {what}")))
        };
        let v = next("v")? as usize;
        let k = next("k")? as usize;
        let tau = next("tau")?;
        let mut layer = |expect_rows: Option<usize>| -> Result<(usize, usize, Vec<f64>, Vec<f64>), MiError> {
            let rows = next("rows")? as usize;
            let cols = next("cols")? as usize;
            if let Some(expected) = expect_rows {
                if rows != expected {
                    return Err(MiError::MalformedCheckpoint(format!(
                        "expected {expected} rows, found {rows}"
                    )));
                }
            }
            let mut w = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                w.push(next("weight")?);
            }
            let mut b = Vec::with_capacity(cols);
            for _ in 0..cols {
                b.push(next("bias")?);
            }
            Ok((rows, cols, w, b))
        };
        let (_, h1, w1, b1) = layer(Some(v + k))?;
        let (_, h2, w2, b2) = layer(Some(h1))?;
        let (_, out, w3, b3) = layer(Some(h2))?;
        if out != 1 {
            return Err(MiError::MalformedCheckpoint("final layer must have one output".into()));
        }
        Ok(Self { v, k, h1, h2, w1, b1, w2, b2, w3, b3: b3[0], tau })
    }
}

fn write_layer(out: &mut String, rows: usize, cols: usize, w: &[f64], b: &[f64]) {
    out.push_str(&format!("{rows} {cols}\n"));
    for r in 0..rows {
        let row: Vec<String> = w[r * cols..(r + 1) * cols].iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let bias: Vec<String> = b.iter().map(|x| x.to_string()).collect();
    out.push_str(&bias.join(" "));
    out.push('\n');
}

/// Fresh critic for a `v`-term vocabulary and `k` topics: default widths,
/// Glorot-uniform weights, zero biases, `tau = 5`.
pub fn init_critic(v: usize, k: usize, rng: &mut ChaCha8Rng) -> MiCritic {
    MiCritic::glorot(v, k, HIDDEN1, HIDDEN2, DEFAULT_TAU, rng)
}

/// Clamps `value` into `[lo, hi]`.
pub fn clip(value: f64, lo: f64, hi: f64) -> Result<f64, MiError> {
    if lo > hi {
        return Err(MiError::InvalidBounds { lo, hi });
    }
    Ok(value.max(lo).min(hi))
}

/// Scores one (count vector, topic vector) pair.
pub fn critic_forward(critic: &MiCritic, a_col: &[f64], h_col: &[f64]) -> Result<f64, MiError> {
    if a_col.len() != critic.v || h_col.len() != critic.k {
        return Err(MiError::DimensionMismatch(format!(
            "critic expects inputs of {}+{}, got {}+{}",
            critic.v,
            critic.k,
            a_col.len(),
            h_col.len()
        )));
    }
    let mut pre_a = vec![0.0; critic.h1];
    for (i, &x) in a_col.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &critic.w1[i * critic.h1..(i + 1) * critic.h1];
        for (o, w) in pre_a.iter_mut().zip(row) {
            *o += x * w;
        }
    }
    let mut pre_h = vec![0.0; critic.h1];
    critic.pre_h_dense(h_col, &mut pre_h);
    let mut z1 = vec![0.0; critic.h1];
    let mut z2 = vec![0.0; critic.h2];
    Ok(critic.forward_from_pre(&pre_a, &pre_h, &mut z1, &mut z2))
}

fn check_batch(
    critic: &MiCritic,
    a: &CountMatrix,
    h: &ClientFactors,
    batch: &[usize],
) -> Result<(), MiError> {
    if critic.v != a.v() || critic.k != h.k() {
        return Err(MiError::DimensionMismatch(format!(
            "critic ({}, {}) vs data ({}, {})",
            critic.v,
            critic.k,
            a.v(),
            h.k()
        )));
    }
    if batch.len() < 2 {
        return Err(MiError::BatchTooSmall { b: batch.len() });
    }
    if let Some(&j) = batch.iter().find(|&&j| j >= a.n() || j >= h.n()) {
        return Err(MiError::DimensionMismatch(format!(
            "batch column {j} out of range (A has {}, H has {})",
            a.n(),
            h.n()
        )));
    }
    Ok(())
}

/// Per-batch layer-1 contributions, computed once per column.
struct BatchPre {
    h1: usize,
    a_pre: Vec<f64>,
    h_pre: Vec<f64>,
}

impl BatchPre {
    fn new(critic: &MiCritic, a: &CountMatrix, h: &ClientFactors, batch: &[usize]) -> Self {
        let b = batch.len();
        let mut a_pre = vec![0.0; b * critic.h1];
        let mut h_pre = vec![0.0; b * critic.h1];
        for (bi, &j) in batch.iter().enumerate() {
            critic.pre_a_sparse(a.column(j), &mut a_pre[bi * critic.h1..(bi + 1) * critic.h1]);
            critic.pre_h_dense(h.column(j), &mut h_pre[bi * critic.h1..(bi + 1) * critic.h1]);
        }
        Self { h1: critic.h1, a_pre, h_pre }
    }

    fn a(&self, bi: usize) -> &[f64] {
        &self.a_pre[bi * self.h1..(bi + 1) * self.h1]
    }

    fn h(&self, bi: usize) -> &[f64] {
        &self.h_pre[bi * self.h1..(bi + 1) * self.h1]
    }
}

/// All pair scores: `scores[j * B + j']` is `T(a_j, h_j')`.
fn pair_scores(critic: &MiCritic, pre: &BatchPre, b: usize) -> Vec<f64> {
    let mut z1 = vec![0.0; critic.h1];
    let mut z2 = vec![0.0; critic.h2];
    let mut scores = vec![0.0; b * b];
    for j in 0..b {
        for jp in 0..b {
            scores[j * b + jp] = critic.forward_from_pre(pre.a(j), pre.h(jp), &mut z1, &mut z2);
        }
    }
    scores
}

/// The clipped mini-batch lower bound over `batch`.
pub fn smile_estimate(
    critic: &MiCritic,
    a: &CountMatrix,
    h: &ClientFactors,
    batch: &[usize],
) -> Result<f64, MiError> {
    check_batch(critic, a, h, batch)?;
    let b = batch.len();
    let pre = BatchPre::new(critic, a, h, batch);
    let scores = pair_scores(critic, &pre, b);
    let lo = (-critic.tau).exp();
    let hi = critic.tau.exp();
    let mut joint = 0.0;
    let mut marg_sum = 0.0;
    for j in 0..b {
        for jp in 0..b {
            let s = scores[j * b + jp];
            if j == jp {
                joint += s;
            } else {
                marg_sum += clip(s.exp(), lo, hi)?;
            }
        }
    }
    let bf = b as f64;
    Ok(joint / bf - (marg_sum / (bf * (bf - 1.0))).ln())
}

/// Gradients of [`smile_estimate`] with respect to the critic parameters
/// (flattened as in [`MiCritic::flat_params`]) and the batch columns of `H`
/// (column `bi` of the batch at `grad_h[bi*k .. (bi+1)*k]`).
pub fn smile_gradients(
    critic: &MiCritic,
    a: &CountMatrix,
    h: &ClientFactors,
    batch: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), MiError> {
    let (gt, gh) = smile_gradient_parts(critic, a, h, batch, true, true)?;
    Ok((gt.expect("requested"), gh.expect("requested")))
}

/// Gradient sides selected by [`smile_gradient_parts`].
type GradientParts = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Shared gradient kernel. `want_theta` / `want_h` select which side is
/// accumulated; skipping the unused side roughly halves the work in the
/// training loop, where the two consumers need different halves.
pub(crate) fn smile_gradient_parts(
    critic: &MiCritic,
    a: &CountMatrix,
    h: &ClientFactors,
    batch: &[usize],
    want_theta: bool,
    want_h: bool,
) -> Result<GradientParts, MiError> {
    check_batch(critic, a, h, batch)?;
    let b = batch.len();
    let bf = b as f64;
    let (h1, h2) = (critic.h1, critic.h2);
    let pre = BatchPre::new(critic, a, h, batch);
    let scores = pair_scores(critic, &pre, b);

    let lo = (-critic.tau).exp();
    let hi = critic.tau.exp();
    let mut marg_sum = 0.0;
    for j in 0..b {
        for jp in 0..b {
            if j != jp {
                marg_sum += clip(scores[j * b + jp].exp(), lo, hi)?;
            }
        }
    }

    let v = critic.v;
    let k = critic.k;
    let off_w1 = 0;
    let off_b1 = off_w1 + (v + k) * h1;
    let off_w2 = off_b1 + h1;
    let off_b2 = off_w2 + h1 * h2;
    let off_w3 = off_b2 + h2;
    let off_b3 = off_w3 + h2;

    let mut grad_theta = want_theta.then(|| vec![0.0; critic.param_count()]);
    // Accumulated layer-1 deltas, grouped by the column that contributed the
    // count side (`acc_a`) or the topic side (`acc_h`). Grouping lets the
    // rank-one weight updates collapse into one pass per column.
    let mut acc_a = vec![0.0; b * h1];
    let mut acc_h = vec![0.0; b * h1];

    let mut z1 = vec![0.0; h1];
    let mut z2 = vec![0.0; h2];
    let mut delta2 = vec![0.0; h2];
    for j in 0..b {
        for jp in 0..b {
            let s = scores[j * b + jp];
            let dscore = if j == jp {
                1.0 / bf
            } else {
                let e = s.exp();
                if e < lo || e > hi {
                    // Clip active: no gradient flows through this pair.
                    continue;
                }
                -e / marg_sum
            };
            let score = critic.forward_from_pre(pre.a(j), pre.h(jp), &mut z1, &mut z2);
            debug_assert_eq!(score, s);

            for o2 in 0..h2 {
                delta2[o2] = if z2[o2] > 0.0 { dscore * critic.w3[o2] } else { 0.0 };
            }
            if let Some(grad) = grad_theta.as_deref_mut() {
                for o2 in 0..h2 {
                    grad[off_w3 + o2] += dscore * z2[o2];
                }
                grad[off_b3] += dscore;
                for o in 0..h1 {
                    let x = z1[o];
                    if x == 0.0 {
                        continue;
                    }
                    let row = &mut grad[off_w2 + o * h2..off_w2 + (o + 1) * h2];
                    for (g, d) in row.iter_mut().zip(&delta2) {
                        *g += x * d;
                    }
                }
                for (g, d) in grad[off_b2..off_b2 + h2].iter_mut().zip(&delta2) {
                    *g += d;
                }
            }
            // delta1 = W2 delta2, masked by the layer-1 ReLU. Each pair's
            // delta lands in the store of the column that fed each input
            // side; the rank-one layer-1 updates then collapse into one
            // pass per column.
            let a_acc = &mut acc_a[j * h1..(j + 1) * h1];
            let h_acc = &mut acc_h[jp * h1..(jp + 1) * h1];
            for o in 0..h1 {
                if z1[o] == 0.0 {
                    continue;
                }
                let row = &critic.w2[o * h2..(o + 1) * h2];
                let mut d1 = 0.0;
                for (w, d) in row.iter().zip(&delta2) {
                    d1 += w * d;
                }
                a_acc[o] += d1;
                h_acc[o] += d1;
            }
        }
    }

    if let Some(grad) = grad_theta.as_deref_mut() {
        for (bi, &j) in batch.iter().enumerate() {
            let a_acc = &acc_a[bi * h1..(bi + 1) * h1];
            for &(i, c) in a.column(j) {
                let row = &mut grad[off_w1 + i as usize * h1..off_w1 + (i as usize + 1) * h1];
                for (g, d) in row.iter_mut().zip(a_acc) {
                    *g += c * d;
                }
            }
            let h_acc = &acc_h[bi * h1..(bi + 1) * h1];
            let h_col = h.column(j);
            for (t, &x) in h_col.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut grad[off_w1 + (v + t) * h1..off_w1 + (v + t + 1) * h1];
                for (g, d) in row.iter_mut().zip(h_acc) {
                    *g += x * d;
                }
            }
            // Every pair's delta1 appears exactly once across the a-side
            // stores, so they also give the bias gradient.
            for o in 0..h1 {
                grad[off_b1 + o] += a_acc[o];
            }
        }
    }

    let grad_h = want_h.then(|| {
        let mut grad_h = vec![0.0; b * k];
        for bi in 0..b {
            let h_acc = &acc_h[bi * h1..(bi + 1) * h1];
            let out = &mut grad_h[bi * k..(bi + 1) * k];
            for (t, g) in out.iter_mut().enumerate() {
                let row = &critic.w1[(v + t) * h1..(v + t + 1) * h1];
                let mut acc = 0.0;
                for (w, d) in row.iter().zip(h_acc) {
                    acc += w * d;
                }
                *g = acc;
            }
        }
        grad_h
    });

    Ok((grad_theta, grad_h))
}

/// One gradient-ascent step on the critic parameters; `H` is untouched.
pub fn critic_ascent_step(
    critic: &mut MiCritic,
    a: &CountMatrix,
    h: &ClientFactors,
    batch: &[usize],
    eta: f64,
) -> Result<(), MiError> {
    let (grad, _) = smile_gradient_parts(critic, a, h, batch, true, false)?;
    critic.add_scaled(&grad.expect("requested"), eta);
    Ok(())
}
