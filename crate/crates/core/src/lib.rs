//! Federated non-negative matrix factorization for topic modeling.
//!
//! The library trains an NMF topic model (`A ≈ W·H`, both factors
//! non-negative) over a corpus that is split across simulated clients.
//! Clients run local mini-batch SGD on a squared reconstruction loss,
//! optionally regularized by a neural mutual-information estimate between
//! each document's count vector and its topic-weight vector, and a server
//! merges the per-client copies of the shared factor with a pluggable
//! aggregation rule (plain weighted averaging or an adaptive optimizer).
//!
//! Module map:
//!
//! - [`corpus`] — tokenization, vocabularies, sparse count matrices.
//! - [`partition`] — Dirichlet label-skew client synthesis.
//! - [`factorization`] — the NMF factors, losses, projected SGD, fold-in.
//! - [`mi`] — the critic network and the clipped mutual-information bound.
//! - [`federation`] — round loop, client updates, aggregator registry,
//!   communication accounting.
//! - [`evaluation`] — embedding-based topic coherence and downstream
//!   classification on topic-weight features.
//!
//! Everything is deterministic under a master seed: per-client RNG streams
//! are derived from `(seed, round, client)` so runs reproduce bit-for-bit
//! regardless of worker-thread count.

pub mod corpus;
pub mod evaluation;
pub mod factorization;
pub mod federation;
pub mod mi;
pub mod partition;
pub mod rng;

pub use corpus::{CountMatrix, Document, Vocabulary};
pub use factorization::{ClientFactors, SgdConfig, TopicModel};
pub use federation::{ClientState, FedRunConfig, RoundMetrics, ServerState};
pub use mi::MiCritic;
pub use partition::{ClientShard, PartitionSpec};
