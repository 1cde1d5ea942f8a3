//! Temporary tuning experiments (deleted before release).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fednmf_core::corpus::CountMatrix;
use fednmf_core::evaluation::train_classifier;
use fednmf_core::factorization::{ClientFactors, SgdConfig, TopicModel};
use fednmf_core::federation::{collect_topic_features, run_training, FedRunConfig};
use fednmf_core::mi::{smile_gradients, MiCritic};
use fednmf_core::partition::{partition_clients, PartitionSpec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn planted_corpus(n_docs: usize, block_p: f64, tokens: usize, seed: u64) -> CountMatrix {
    let classes = 4;
    let block = 25;
    let shared = 20;
    let v = classes * block + shared;
    let mut r = rng(seed);
    let mut columns = Vec::with_capacity(n_docs);
    let mut labels = Vec::with_capacity(n_docs);
    for j in 0..n_docs {
        let label = j % classes;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..tokens {
            let idx = if r.gen::<f64>() < block_p {
                label * block + r.gen_range(0..block)
            } else {
                classes * block + r.gen_range(0..shared)
            };
            *counts.entry(idx as u32).or_insert(0.0) += 1.0;
        }
        columns.push(counts.into_iter().collect::<Vec<(u32, f64)>>());
        labels.push(label);
    }
    let ids = (0..n_docs).map(|j| format!("d{j}")).collect();
    CountMatrix::from_columns(v, columns, ids, labels)
}

fn arm(matrix: &CountMatrix, lambda: f64, seed: u64, rounds: usize, epochs: usize) -> (f64, Vec<ClientFactors>) {
    let spec = PartitionSpec { clients: 10, alpha: 0.1, seed };
    let shards = partition_clients(matrix, &spec, &matrix.label_distribution()).unwrap();
    let config = FedRunConfig {
        clients: 10,
        participation: 0.2,
        rounds,
        topics: 20,
        sgd: SgdConfig { eta: 0.05, lambda, batch_size: 32, epochs },
        aggregator: "fedavg".into(),
        master_seed: seed,
        ..Default::default()
    };
    let outcome = run_training(matrix, &shards, &config).unwrap();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (global, vector) in collect_topic_features(&shards, &outcome.factors) {
        features.push(vector);
        labels.push(matrix.labels()[global]);
    }
    let report = train_classifier(&features, &labels, 0.8, 4242, 300, 0.5).unwrap();
    (report.macro_f1, outcome.factors)
}

#[test]
#[ignore]
fn explore_regimes() {
    for (block_p, tokens, rounds, epochs) in [
        (0.45, 10, 10, 5),
        (0.45, 10, 20, 5),
        (0.55, 12, 10, 5),
        (0.45, 10, 10, 10),
    ] {
        let matrix = planted_corpus(2000, block_p, tokens, 14_000);
        let mut margins = Vec::new();
        for seed in 1..=3u64 {
            let (plain, h_plain) = arm(&matrix, 0.0, 14_100 + seed, rounds, epochs);
            let (mi, h_mi) = arm(&matrix, 0.1, 14_100 + seed, rounds, epochs);
            let mut max_h_diff = 0.0f64;
            for (a, b) in h_plain.iter().zip(&h_mi) {
                for j in 0..a.n() {
                    for (x, y) in a.column(j).iter().zip(b.column(j)) {
                        max_h_diff = max_h_diff.max((x - y).abs());
                    }
                }
            }
            println!(
                "block_p={block_p} tokens={tokens} T={rounds} E={epochs} seed={seed}: plain={plain:.4} mi={mi:.4} dF1={:+.4} maxHdiff={max_h_diff:.2e}",
                mi - plain
            );
            margins.push(mi - plain);
        }
        let mean: f64 = margins.iter().sum::<f64>() / margins.len() as f64;
        println!("  => mean margin {mean:+.4}");
    }
}

/// Wiring check: the H gradient from the shared kernel is identical whether
/// or not the theta side is requested, and its magnitude is comparable to
/// the reconstruction gradient once scaled by lambda.
#[test]
#[ignore]
fn gradient_magnitudes() {
    let matrix = planted_corpus(200, 0.7, 12, 1);
    let mut r = rng(2);
    let w = TopicModel::init(matrix.v(), 20, 0.07, &mut r);
    let h = ClientFactors::init(20, matrix.n(), 0.07, &mut r);
    let critic = fednmf_core::mi::init_critic(matrix.v(), 20, &mut rng(3));
    let batch: Vec<usize> = (0..32).collect();
    let (_, gh_mi) = smile_gradients(&critic, &matrix, &h, &batch).unwrap();
    let (gw, gh) =
        fednmf_core::factorization::loss_gradients(&w, &h, &matrix, &batch, 0.0, None).unwrap();
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    println!(
        "||grad_h_recon|| = {:.4}, 0.1*||grad_h_mi|| = {:.6}, ||grad_w|| = {:.4}",
        norm(&gh),
        0.1 * norm(&gh_mi),
        norm(&gw)
    );
    let trained = {
        let mut c = critic.clone();
        for _ in 0..100 {
            fednmf_core::mi::critic_ascent_step(&mut c, &matrix, &h, &batch, 0.05).unwrap();
        }
        c
    };
    let (_, gh_mi_trained) = smile_gradients(&trained, &matrix, &h, &batch).unwrap();
    println!("after 100 ascent steps: 0.1*||grad_h_mi|| = {:.6}", 0.1 * norm(&gh_mi_trained));
    let untrained_vs: MiCritic = critic;
    let _ = untrained_vs;
}
