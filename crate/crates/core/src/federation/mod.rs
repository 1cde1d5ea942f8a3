//! The federated round loop.
//!
//! A server holds the master copies of the shared factor `W` and the critic
//! parameters. Each round it samples a participant set, ships the masters to
//! those clients, runs local SGD plus critic ascent on each (in parallel),
//! and merges the returned copies with the configured aggregation rule. The
//! private factors `H_i` never leave their client. Communication is counted,
//! not transported: every round moves `2 * m * (|W| + |theta|)` parameters at
//! four bytes each.
//!
//! Determinism: client selection and every client's local stream are derived
//! from `(master_seed, round, client_id)`, so outputs are identical for any
//! worker-thread count.

pub mod aggregate;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CountMatrix;
use crate::factorization::{
    self, init_scale, reconstruction_loss, sgd_step, ClientFactors, FactorError, SgdConfig,
    TopicModel,
};
use crate::mi::{self, critic_ascent_step, smile_estimate, MiCritic, MiError};
use crate::partition::ClientShard;
use crate::rng::{self, TAG_CLIENT, TAG_CRITIC_INIT, TAG_FACTOR_INIT, TAG_SELECT, TAG_TOPIC_INIT};

use aggregate::{AggregatorParams, OptState};

/// Bytes per transmitted parameter in the communication-cost model.
pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid run configuration:\n  {}", problems.join("\n  "))]
    InvalidConfig { problems: Vec<String> },
    #[error("no client updates to aggregate")]
    EmptyUpdateSet,
    #[error("update tensor has {found} parameters, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("unknown aggregator `{name}` (known: {known})")]
    UnknownAggregator { name: String, known: String },
    #[error("client {client_id} has an empty shard")]
    EmptyShard { client_id: usize },
    #[error("training diverged at round {round} (non-finite loss); reduce eta or lambda")]
    Diverged { round: usize },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Mi(#[from] MiError),
}

/// Everything a run needs: federation shape, local SGD settings, the
/// aggregation rule, and the server optimizer knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRunConfig {
    /// Client count `K`.
    pub clients: usize,
    /// Participation fraction `C` in (0, 1].
    pub participation: f64,
    /// Round count `T`.
    pub rounds: usize,
    /// Topic count `k`.
    pub topics: usize,
    pub sgd: SgdConfig,
    /// Aggregation rule name; see [`aggregate::names`].
    pub aggregator: String,
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adapt_eps: f64,
    pub master_seed: u64,
}

impl Default for FedRunConfig {
    fn default() -> Self {
        Self {
            clients: 1,
            participation: 0.2,
            rounds: 1,
            topics: 10,
            sgd: SgdConfig::default(),
            aggregator: "fedavg".into(),
            server_lr: 1.0,
            beta1: 0.9,
            beta2: 0.99,
            adapt_eps: 1e-3,
            master_seed: 42,
        }
    }
}

impl FedRunConfig {
    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.clients < 1 {
            problems.push("clients (K) must be at least 1".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            problems.push(format!(
                "participation (C) must satisfy 0 < C <= 1, got {}",
                self.participation
            ));
        }
        if self.rounds < 1 {
            problems.push("rounds (T) must be at least 1".into());
        }
        if self.topics < 1 {
            problems.push("topics (k) must be at least 1".into());
        }
        if !(self.sgd.eta > 0.0 && self.sgd.eta.is_finite()) {
            problems.push(format!("sgd.eta must be positive, got {}", self.sgd.eta));
        }
        if !(self.sgd.lambda >= 0.0 && self.sgd.lambda.is_finite()) {
            problems.push(format!("sgd.lambda must be nonnegative, got {}", self.sgd.lambda));
        }
        if self.sgd.batch_size < 1 {
            problems.push("sgd.batch_size (B) must be at least 1".into());
        }
        if self.sgd.epochs < 1 {
            problems.push("sgd.epochs (E) must be at least 1".into());
        }
        if !aggregate::names().contains(&self.aggregator.to_lowercase().as_str()) {
            problems.push(format!(
                "aggregator `{}` is not one of {}",
                self.aggregator,
                aggregate::names().join(", ")
            ));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            problems.push(format!("server_lr must be positive, got {}", self.server_lr));
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&value) {
                problems.push(format!("{name} must lie in [0, 1), got {value}"));
            }
        }
        if !(self.adapt_eps > 0.0 && self.adapt_eps.is_finite()) {
            problems.push(format!("adapt_eps must be positive, got {}", self.adapt_eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    pub fn aggregator_params(&self) -> AggregatorParams {
        AggregatorParams {
            server_lr: self.server_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adapt_eps: self.adapt_eps,
        }
    }
}

/// Master state held by the server between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub round: usize,
    pub w_master: TopicModel,
    pub critic_master: MiCritic,
    w_opt: OptState,
    theta_opt: OptState,
    pub cumulative_comm_bytes: u64,
}

/// One simulated client: its slice of the corpus and its private factor.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    /// Global column indices of the shard, aligned with the columns of
    /// `data` and `factors`.
    pub columns: Vec<usize>,
    pub data: CountMatrix,
    pub factors: ClientFactors,
}

/// Per-round record written to the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub participants: Vec<usize>,
    pub mean_recon_loss: f64,
    pub mean_mi_estimate: f64,
    pub cumulative_comm_bytes: u64,
}

/// One metrics record as a JSON line (no trailing newline).
pub fn metrics_line(metrics: &RoundMetrics) -> String {
    serde_json::to_string(metrics).expect("metrics are always serializable")
}

/// Uniform sample of `max(floor(C*K), 1)` distinct client ids, sorted.
pub fn select_clients(k: usize, c: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = (((c * k as f64).floor() as usize).max(1)).min(k);
    let mut ids: Vec<usize> = index::sample(rng, k, m).into_iter().collect();
    ids.sort_unstable();
    ids
}

/// Local training on one client: copies the incoming masters, runs `E`
/// epochs of shuffled mini-batches (projected SGD on `(W, H_i)`, then a
/// critic ascent step per batch), and returns the trained copies. `H_i` is
/// updated in place and stays on the client.
///
/// Batches with a single column skip the pair-based terms: the step runs
/// reconstruction-only and the critic is left untouched for that batch.
pub fn client_update(
    client: &mut ClientState,
    w_in: &TopicModel,
    critic_in: &MiCritic,
    sgd: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TopicModel, MiCritic), FederationError> {
    let mut w = w_in.clone();
    let mut critic = critic_in.clone();
    let mut order: Vec<usize> = (0..client.data.n()).collect();
    for _ in 0..sgd.epochs {
        order.shuffle(rng);
        for batch in order.chunks(sgd.batch_size) {
            if batch.len() < 2 {
                let recon_only = SgdConfig { lambda: 0.0, ..*sgd };
                sgd_step(&mut w, &mut client.factors, &client.data, batch, &recon_only, None)?;
                continue;
            }
            sgd_step(&mut w, &mut client.factors, &client.data, batch, sgd, Some(&critic))?;
            critic_ascent_step(&mut critic, &client.data, &client.factors, batch, sgd.eta)?;
        }
    }
    Ok((w, critic))
}

/// Builds the initial server and client states for a run.
pub fn setup(
    matrix: &CountMatrix,
    shards: &[ClientShard],
    config: &FedRunConfig,
) -> Result<(ServerState, Vec<ClientState>), FederationError> {
    config
        .validate()
        .map_err(|problems| FederationError::InvalidConfig { problems })?;
    if shards.len() != config.clients {
        return Err(FederationError::InvalidConfig {
            problems: vec![format!(
                "config names {} clients but the manifest has {} shards",
                config.clients,
                shards.len()
            )],
        });
    }
    let k = config.topics;
    let scale = init_scale(matrix, k);
    let w_master = TopicModel::init(
        matrix.v(),
        k,
        scale,
        &mut rng::stream_rng(config.master_seed, TAG_TOPIC_INIT, 0, 0),
    );
    let critic_master = mi::init_critic(
        matrix.v(),
        k,
        &mut rng::stream_rng(config.master_seed, TAG_CRITIC_INIT, 0, 0),
    );
    let mut clients = Vec::with_capacity(shards.len());
    for (i, shard) in shards.iter().enumerate() {
        if shard.client_id != i {
            return Err(FederationError::InvalidConfig {
                problems: vec![format!(
                    "shard {i} carries client id {}; manifests must list clients in order",
                    shard.client_id
                )],
            });
        }
        if shard.columns.is_empty() {
            return Err(FederationError::EmptyShard { client_id: shard.client_id });
        }
        let data = matrix.select_columns(&shard.columns);
        let factors = ClientFactors::init(
            k,
            data.n(),
            scale,
            &mut rng::stream_rng(config.master_seed, TAG_FACTOR_INIT, shard.client_id as u64, 0),
        );
        clients.push(ClientState {
            client_id: shard.client_id,
            columns: shard.columns.clone(),
            data,
            factors,
        });
    }
    Ok((
        ServerState {
            round: 0,
            w_master,
            critic_master,
            w_opt: OptState::default(),
            theta_opt: OptState::default(),
            cumulative_comm_bytes: 0,
        },
        clients,
    ))
}

/// Mean full-shard reconstruction loss and probe-batch MI estimate over the
/// given clients, under the current master parameters.
fn evaluate_clients(
    server: &ServerState,
    clients: &[ClientState],
    ids: &[usize],
    probe_batch: usize,
) -> Result<(f64, f64), FederationError> {
    let mut loss_sum = 0.0;
    let mut mi_sum = 0.0;
    let mut mi_count = 0usize;
    for &cid in ids {
        let client = &clients[cid];
        let all: Vec<usize> = (0..client.data.n()).collect();
        loss_sum += reconstruction_loss(&server.w_master, &client.factors, &client.data, &all)?;
        let probe_len = client.data.n().min(probe_batch);
        if probe_len >= 2 {
            let probe: Vec<usize> = (0..probe_len).collect();
            mi_sum +=
                smile_estimate(&server.critic_master, &client.data, &client.factors, &probe)?;
            mi_count += 1;
        }
    }
    let denom = ids.len().max(1) as f64;
    let mean_mi = if mi_count > 0 { mi_sum / mi_count as f64 } else { 0.0 };
    Ok((loss_sum / denom, mean_mi))
}

/// Round-zero record: losses under the freshly initialized parameters,
/// evaluated over all clients, before any communication.
pub fn baseline_metrics(
    server: &ServerState,
    clients: &[ClientState],
    config: &FedRunConfig,
) -> Result<RoundMetrics, FederationError> {
    let ids: Vec<usize> = (0..clients.len()).collect();
    let (loss, mi) = evaluate_clients(server, clients, &ids, config.sgd.batch_size)?;
    Ok(RoundMetrics {
        round: 0,
        participants: Vec::new(),
        mean_recon_loss: loss,
        mean_mi_estimate: mi,
        cumulative_comm_bytes: server.cumulative_comm_bytes,
    })
}

/// One full round: select participants, train them in parallel, aggregate
/// both masters, account the round's traffic, and measure losses over the
/// participants.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &FedRunConfig,
) -> Result<RoundMetrics, FederationError> {
    let round = server.round + 1;
    let mut sel_rng = rng::stream_rng(config.master_seed, TAG_SELECT, round as u64, 0);
    let participants = select_clients(config.clients, config.participation, &mut sel_rng);

    let w_master = &server.w_master;
    let critic_master = &server.critic_master;
    let sgd = config.sgd;
    let master_seed = config.master_seed;
    let results: Vec<Option<(TopicModel, MiCritic, f64)>> = clients
        .par_iter_mut()
        .map(|client| -> Result<_, FederationError> {
            if participants.binary_search(&client.client_id).is_err() {
                return Ok(None);
            }
            let mut local_rng =
                rng::stream_rng(master_seed, TAG_CLIENT, round as u64, client.client_id as u64);
            let (w, critic) = client_update(client, w_master, critic_master, &sgd, &mut local_rng)?;
            let weight = client.data.n() as f64;
            Ok(Some((w, critic, weight)))
        })
        .collect::<Result<_, _>>()?;

    let trained: Vec<(TopicModel, MiCritic, f64)> = results.into_iter().flatten().collect();
    let aggregator = aggregate::create(&config.aggregator, &config.aggregator_params())?;

    let w_updates: Vec<(&[f64], f64)> =
        trained.iter().map(|(w, _, n)| (w.weights(), *n)).collect();
    aggregator.aggregate(server.w_master.weights_mut(), &mut server.w_opt, &w_updates)?;
    factorization::project_nonneg(server.w_master.weights_mut());

    let theta_updates: Vec<Vec<f64>> = trained.iter().map(|(_, c, _)| c.flat_params()).collect();
    let theta_refs: Vec<(&[f64], f64)> = theta_updates
        .iter()
        .zip(&trained)
        .map(|(flat, (_, _, n))| (flat.as_slice(), *n))
        .collect();
    let mut theta_master = server.critic_master.flat_params();
    aggregator.aggregate(&mut theta_master, &mut server.theta_opt, &theta_refs)?;
    server.critic_master.set_flat_params(&theta_master);

    let m = participants.len() as u64;
    let params_per_client =
        (server.w_master.weights().len() + server.critic_master.param_count()) as u64;
    server.cumulative_comm_bytes += 2 * m * params_per_client * BYTES_PER_PARAM;
    server.round = round;

    let (loss, mi) = evaluate_clients(server, clients, &participants, config.sgd.batch_size)?;
    if !loss.is_finite() || !mi.is_finite() {
        return Err(FederationError::Diverged { round });
    }
    Ok(RoundMetrics {
        round,
        participants,
        mean_recon_loss: loss,
        mean_mi_estimate: mi,
        cumulative_comm_bytes: server.cumulative_comm_bytes,
    })
}

/// Result of a complete training run.
pub struct TrainOutcome {
    pub model: TopicModel,
    pub critic: MiCritic,
    /// Per-client private factors, in client order.
    pub factors: Vec<ClientFactors>,
    /// Round 0 baseline plus one record per round.
    pub metrics: Vec<RoundMetrics>,
}

/// `T` rounds from fresh initialization.
pub fn run_training(
    matrix: &CountMatrix,
    shards: &[ClientShard],
    config: &FedRunConfig,
) -> Result<TrainOutcome, FederationError> {
    let (mut server, mut clients) = setup(matrix, shards, config)?;
    let mut metrics = Vec::with_capacity(config.rounds + 1);
    metrics.push(baseline_metrics(&server, &clients, config)?);
    for _ in 0..config.rounds {
        metrics.push(run_round(&mut server, &mut clients, config)?);
    }
    Ok(TrainOutcome {
        model: server.w_master,
        critic: server.critic_master,
        factors: clients.into_iter().map(|c| c.factors).collect(),
        metrics,
    })
}

/// Gathers every trained document's topic-weight vector back into global
/// column order: `(global column, topic weights)` sorted by column.
/// Documents the partition discarded are absent.
pub fn collect_topic_features(
    shards: &[ClientShard],
    factors: &[ClientFactors],
) -> Vec<(usize, Vec<f64>)> {
    assert_eq!(shards.len(), factors.len());
    let mut rows = Vec::new();
    for (shard, h) in shards.iter().zip(factors) {
        assert_eq!(shard.columns.len(), h.n());
        for (local, &global) in shard.columns.iter().enumerate() {
            rows.push((global, h.column(local).to_vec()));
        }
    }
    rows.sort_by_key(|&(global, _)| global);
    rows
}
