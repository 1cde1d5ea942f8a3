//! Run and sweep config files (TOML).
//!
//! The train config mirrors the run-configuration fields one to one; omitted
//! keys take the documented defaults and the effective values are echoed
//! into the run manifest.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use fednmf_core::federation::FedRunConfig;
use fednmf_core::SgdConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    /// Prepared bundle directory.
    pub matrix: PathBuf,
    /// Shard manifest path.
    pub shards: PathBuf,
    /// Topic count k.
    pub topics: usize,
    /// Round count T.
    pub rounds: usize,
    /// Client count K; defaults to the manifest's shard count.
    pub clients: Option<usize>,
    #[serde(default = "defaults::participation")]
    pub participation: f64,
    #[serde(default = "defaults::aggregator")]
    pub aggregator: String,
    #[serde(default = "defaults::server_lr")]
    pub server_lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adapt_eps")]
    pub adapt_eps: f64,
    #[serde(default = "defaults::master_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub sgd: SgdFileConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdFileConfig {
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
}

impl Default for SgdFileConfig {
    fn default() -> Self {
        Self {
            eta: defaults::eta(),
            lambda: defaults::lambda(),
            batch_size: defaults::batch_size(),
            epochs: defaults::epochs(),
        }
    }
}

mod defaults {
    pub fn participation() -> f64 {
        0.2
    }
    pub fn aggregator() -> String {
        "fedavg".into()
    }
    pub fn server_lr() -> f64 {
        1.0
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.99
    }
    pub fn adapt_eps() -> f64 {
        1e-3
    }
    pub fn master_seed() -> u64 {
        42
    }
    pub fn eta() -> f64 {
        0.05
    }
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn epochs() -> usize {
        20
    }
}

impl TrainFileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: Self = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    /// Resolves against the shard manifest and validates every field,
    /// reporting all problems at once.
    pub fn to_run_config(&self, manifest_clients: usize, seed_override: Option<u64>) -> Result<FedRunConfig> {
        let mut problems = Vec::new();
        if let Some(clients) = self.clients {
            if clients != manifest_clients {
                problems.push(format!(
                    "clients (K) is {clients} but the shard manifest has {manifest_clients}"
                ));
            }
        }
        let config = FedRunConfig {
            clients: self.clients.unwrap_or(manifest_clients),
            participation: self.participation,
            rounds: self.rounds,
            topics: self.topics,
            sgd: SgdConfig {
                eta: self.sgd.eta,
                lambda: self.sgd.lambda,
                batch_size: self.sgd.batch_size,
                epochs: self.sgd.epochs,
            },
            aggregator: self.aggregator.clone(),
            server_lr: self.server_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adapt_eps: self.adapt_eps,
            master_seed: seed_override.unwrap_or(self.master_seed),
        };
        if let Err(more) = config.validate() {
            problems.extend(more);
        }
        if !problems.is_empty() {
            bail!("invalid run configuration:\n  {}", problems.join("\n  "));
        }
        Ok(config)
    }
}

/// One sweep cell before grid overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub topics: usize,
    pub rounds: usize,
    /// Partition client count.
    pub clients: usize,
    /// Partition concentration.
    #[serde(default = "defaults_sweep::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::participation")]
    pub participation: f64,
    #[serde(default = "defaults::aggregator")]
    pub aggregator: String,
    #[serde(default = "defaults::server_lr")]
    pub server_lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adapt_eps")]
    pub adapt_eps: f64,
    #[serde(default = "defaults::master_seed")]
    pub seed: u64,
    #[serde(default)]
    pub sgd: SgdFileConfig,
}

mod defaults_sweep {
    pub fn alpha() -> f64 {
        1.0
    }
}

/// Per-axis value lists; empty axes keep the base value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub topics: Vec<usize>,
    #[serde(default)]
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub epochs: Vec<usize>,
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub aggregator: Vec<String>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub clients: Vec<usize>,
    #[serde(default)]
    pub seed: Vec<u64>,
}

/// Optional per-cell evaluation settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEval {
    pub embeddings: Option<PathBuf>,
    #[serde(default = "defaults_eval::top_words")]
    pub top_words: usize,
    #[serde(default)]
    pub classify: bool,
    #[serde(default = "defaults_eval::split_ratio")]
    pub split_ratio: f64,
    #[serde(default = "defaults::master_seed")]
    pub seed: u64,
    #[serde(default = "defaults_eval::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults_eval::lr")]
    pub lr: f64,
}

mod defaults_eval {
    pub fn top_words() -> usize {
        10
    }
    pub fn split_ratio() -> f64 {
        0.8
    }
    pub fn epochs() -> usize {
        300
    }
    pub fn lr() -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Prepared bundle directory shared by all cells.
    pub matrix: PathBuf,
    pub base: SweepBase,
    #[serde(default)]
    pub grid: SweepGrid,
    pub eval: Option<SweepEval>,
}

impl SweepConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read sweep config {}", path.display()))?;
        let config: Self = toml::from_str(&text)
            .with_context(|| format!("cannot parse sweep config {}", path.display()))?;
        Ok(config)
    }
}

/// One fully resolved sweep cell.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub lambda: f64,
    pub topics: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub eta: f64,
    pub aggregator: String,
    pub alpha: f64,
    pub clients: usize,
    pub seed: u64,
}

/// Cartesian product of the grid axes over the base cell, in a fixed axis
/// order so the table layout is stable.
pub fn expand_cells(base: &SweepBase, grid: &SweepGrid) -> Vec<SweepCell> {
    fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
        if values.is_empty() {
            vec![fallback]
        } else {
            values.to_vec()
        }
    }
    let lambdas = axis(&grid.lambda, base.sgd.lambda);
    let topics = axis(&grid.topics, base.topics);
    let batches = axis(&grid.batch_size, base.sgd.batch_size);
    let epochs = axis(&grid.epochs, base.sgd.epochs);
    let etas = axis(&grid.eta, base.sgd.eta);
    let aggregators = axis(&grid.aggregator, base.aggregator.clone());
    let alphas = axis(&grid.alpha, base.alpha);
    let clients = axis(&grid.clients, base.clients);
    let seeds = axis(&grid.seed, base.seed);

    let mut cells = Vec::new();
    for &lambda in &lambdas {
        for &k in &topics {
            for &batch_size in &batches {
                for &e in &epochs {
                    for &eta in &etas {
                        for aggregator in &aggregators {
                            for &alpha in &alphas {
                                for &c in &clients {
                                    for &seed in &seeds {
                                        cells.push(SweepCell {
                                            lambda,
                                            topics: k,
                                            batch_size,
                                            epochs: e,
                                            eta,
                                            aggregator: aggregator.clone(),
                                            alpha,
                                            clients: c,
                                            seed,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}
