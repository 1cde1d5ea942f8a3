//! Dirichlet label-skew client partitioning.
//!
//! Each simulated client draws a label distribution `q ~ Dir(alpha * p)`
//! around the corpus distribution `p` and receives an equal-size shard whose
//! label composition realizes `q` as closely as the per-label document pools
//! allow. Small `alpha` gives near-single-label clients, large `alpha` gives
//! near-identical ones.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::CountMatrix;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("Dirichlet concentration entry {index} is not positive ({value})")]
    InvalidConcentration { index: usize, value: f64 },
    #[error("cannot split {n} documents across {k} clients")]
    TooFewDocuments { n: usize, k: usize },
    #[error("label distribution is invalid: {0}")]
    InvalidDistribution(String),
    #[error("shard manifest is malformed: {0}")]
    MalformedManifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How to split a corpus across clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    /// Client count `K`.
    pub clients: usize,
    /// Dirichlet concentration `alpha`.
    pub alpha: f64,
    pub seed: u64,
}

/// One client's slice of the corpus: global column indices plus the realized
/// label histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    pub columns: Vec<usize>,
    pub label_mix: Vec<usize>,
}

/// Draws from `Dir(concentration)` by normalizing Gamma variates sampled with
/// the Marsaglia–Tsang method (with the `shape < 1` boost).
pub fn sample_dirichlet(
    concentration: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, PartitionError> {
    for (index, &value) in concentration.iter().enumerate() {
        if !value.is_finite() || value <= 0.0 {
            return Err(PartitionError::InvalidConcentration { index, value });
        }
    }
    if concentration.len() == 1 {
        return Ok(vec![1.0]);
    }
    // Retry on the (rare, tiny-shape) event that every Gamma variate
    // underflows to zero.
    loop {
        let mut draw: Vec<f64> = concentration
            .iter()
            .map(|&a| sample_gamma(a, rng))
            .collect();
        let sum: f64 = draw.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for x in &mut draw {
                *x /= sum;
            }
            return Ok(draw);
        }
    }
}

/// Gamma(shape, 1) via Marsaglia–Tsang. For shape < 1, samples
/// Gamma(shape + 1) and applies the `u^(1/shape)` boost.
fn sample_gamma(shape: f64, rng: &mut ChaCha8Rng) -> f64 {
    if shape < 1.0 {
        let boost: f64 = rng.gen::<f64>().powf(1.0 / shape);
        return sample_gamma(shape + 1.0, rng) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = sample_standard_normal(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Standard normal via the Marsaglia polar method.
fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        let v: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Largest-remainder apportionment of `n` slots across `weights` (nonnegative
/// with positive sum). Ties go to the lower index.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut rema: Vec<(usize, f64)> = quotas
        .iter()
        .enumerate()
        .map(|(i, q)| (i, q - q.floor()))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in rema.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Splits `matrix` into `K` equal shards of `floor(N/K)` documents each.
///
/// Per client, a label distribution `q ~ Dir(alpha * global_p)` is drawn and
/// realized as per-label document counts by largest-remainder apportionment;
/// documents are then taken without replacement from per-label pools. When a
/// requested label's pool runs dry, the deficit is re-apportioned from `q`
/// renormalized over labels with nonempty pools (falling back to
/// stock-proportional weights if `q` has no mass left there). The `N mod K`
/// leftover documents are discarded. Deterministic under `spec.seed`.
pub fn partition_clients(
    matrix: &CountMatrix,
    spec: &PartitionSpec,
    global_p: &[f64],
) -> Result<Vec<ClientShard>, PartitionError> {
    assert!(spec.clients >= 1, "client count must be at least 1");
    assert!(spec.alpha > 0.0, "alpha must be positive");
    let n = matrix.n();
    let k = spec.clients;
    if n < k {
        return Err(PartitionError::TooFewDocuments { n, k });
    }
    let l = global_p.len();
    if matrix.labels().iter().any(|&lab| lab >= l) {
        return Err(PartitionError::InvalidDistribution(
            "global_p shorter than the label range".into(),
        ));
    }
    if global_p.iter().any(|&p| p < 0.0 || !p.is_finite())
        || (global_p.iter().sum::<f64>() - 1.0).abs() > 1e-6
    {
        return Err(PartitionError::InvalidDistribution(
            "global_p must be a probability vector".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Per-label pools, each shuffled once; popping from the back is a draw
    // without replacement.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (j, &lab) in matrix.labels().iter().enumerate() {
        pools[lab].push(j);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    // Labels with zero global mass never receive quota; the Dirichlet draw
    // covers the supported labels only.
    let support: Vec<usize> = (0..l).filter(|&lab| global_p[lab] > 0.0).collect();
    let concentration: Vec<f64> = support.iter().map(|&lab| spec.alpha * global_p[lab]).collect();

    let per_client = n / k;
    let mut shards = Vec::with_capacity(k);
    for client_id in 0..k {
        let q_support = sample_dirichlet(&concentration, &mut rng)?;
        let mut q = vec![0.0; l];
        for (s, &lab) in support.iter().enumerate() {
            q[lab] = q_support[s];
        }

        let mut columns = Vec::with_capacity(per_client);
        let mut want = apportion(per_client, &q);
        loop {
            let mut deficit = 0;
            for lab in 0..l {
                let take = want[lab].min(pools[lab].len());
                for _ in 0..take {
                    columns.push(pools[lab].pop().expect("pool checked nonempty"));
                }
                deficit += want[lab] - take;
            }
            if deficit == 0 {
                break;
            }
            let masked: Vec<f64> = (0..l)
                .map(|lab| if pools[lab].is_empty() { 0.0 } else { q[lab] })
                .collect();
            let weights = if masked.iter().sum::<f64>() > 0.0 {
                masked
            } else {
                (0..l).map(|lab| pools[lab].len() as f64).collect()
            };
            want = apportion(deficit, &weights);
        }
        columns.sort_unstable();
        let mut label_mix = vec![0usize; l];
        for &j in &columns {
            label_mix[matrix.labels()[j]] += 1;
        }
        shards.push(ClientShard { client_id, columns, label_mix });
    }
    Ok(shards)
}

/// Writes the shard manifest: one `client_id: col,col,...` line per client.
pub fn save_manifest(path: &Path, shards: &[ClientShard]) -> Result<(), PartitionError> {
    let mut out = String::new();
    for shard in shards {
        let cols: Vec<String> = shard.columns.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("{}: {}\n", shard.client_id, cols.join(",")));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a shard manifest; label mixes are rebuilt from `matrix`.
pub fn load_manifest(
    path: &Path,
    matrix: &CountMatrix,
) -> Result<Vec<ClientShard>, PartitionError> {
    let text = fs::read_to_string(path)?;
    let l = matrix.num_classes();
    let mut shards = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, cols) = line.split_once(':').ok_or_else(|| {
            PartitionError::MalformedManifest(format!("line {} lacks `:`", lineno + 1))
        })?;
        let client_id: usize = id.trim().parse().map_err(|_| {
            PartitionError::MalformedManifest(format!("bad client id `{id}`"))
        })?;
        let columns: Vec<usize> = cols
            .trim()
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| PartitionError::MalformedManifest(format!("bad column `{s}`")))
            })
            .collect::<Result<_, _>>()?;
        if let Some(&bad) = columns.iter().find(|&&c| c >= matrix.n()) {
            return Err(PartitionError::MalformedManifest(format!(
                "column {bad} out of range for N={}",
                matrix.n()
            )));
        }
        let mut label_mix = vec![0usize; l];
        for &j in &columns {
            label_mix[matrix.labels()[j]] += 1;
        }
        shards.push(ClientShard { client_id, columns, label_mix });
    }
    Ok(shards)
}
