//! The five subcommands: prepare, partition, train, eval, sweep.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use fednmf_core::corpus::{
    self, build_vocabulary, load_bundle, read_corpus, read_stopwords, save_bundle, split_train_test,
    vectorize, Bundle,
};
use fednmf_core::evaluation::{
    load_embeddings, model_coherence, train_classifier, ClassificationReport, EmbeddingTable,
    TopicReport,
};
use fednmf_core::factorization::{infer_step_size, infer_topics, TopicModel};
use fednmf_core::federation::{
    self, collect_topic_features, metrics_line, FedRunConfig, RoundMetrics,
};
use fednmf_core::partition::{load_manifest, partition_clients, save_manifest, PartitionSpec};

use crate::config::{expand_cells, SweepCell, SweepConfig, TrainFileConfig};
use crate::features::{load_features, save_features, FeatureSet};
use crate::manifest::RunManifest;
use crate::{EvalArgs, EvalMode, PartitionArgs, PrepareArgs, SweepArgs, TrainArgs};

/// Paths inside config files resolve against the config's own directory.
fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn flagged_columns(matrix: &corpus::CountMatrix) -> Vec<usize> {
    (0..matrix.n()).filter(|&j| matrix.column(j).is_empty()).collect()
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    let (docs, classes) = read_corpus(&args.corpus)
        .with_context(|| format!("cannot prepare {}", args.corpus.display()))?;
    let stopwords = match &args.stopwords {
        Some(path) => read_stopwords(path)
            .with_context(|| format!("cannot read stopwords {}", path.display()))?,
        None => HashSet::new(),
    };
    let vocab = build_vocabulary(&docs, &stopwords, args.min_count)?;
    let (matrix, flagged) = vectorize(&docs, &vocab, &stopwords)?;

    let mut manifest = RunManifest::new(
        "prepare",
        args.seed,
        serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "stopwords": args.stopwords.as_ref().map(|p| p.display().to_string()),
            "min_count": args.min_count,
            "split": args.split,
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.corpus)?;
    if let Some(path) = &args.stopwords {
        manifest.add_input(path)?;
    }

    fs::create_dir_all(&args.out_dir)?;
    let bundle = Bundle { matrix, vocab, classes, flagged };
    save_bundle(&args.out_dir, &bundle)?;
    manifest.add_output(&args.out_dir.join("matrix.txt"));

    if let Some(ratio) = args.split {
        let (train, test) = split_train_test(&bundle.matrix, ratio, args.seed)?;
        for (name, matrix) in [("train", train), ("test", test)] {
            let dir = args.out_dir.join(name);
            let flagged = flagged_columns(&matrix);
            let side = Bundle {
                matrix,
                vocab: bundle.vocab.clone(),
                classes: bundle.classes.clone(),
                flagged,
            };
            save_bundle(&dir, &side)?;
            manifest.add_output(&dir.join("matrix.txt"));
        }
    }
    manifest.save(&args.out_dir.join("manifest.json"))?;
    println!(
        "prepared {} documents: V={} classes={} empty={}",
        bundle.matrix.n(),
        bundle.matrix.v(),
        bundle.classes.len(),
        bundle.flagged.len()
    );
    Ok(())
}

pub fn partition(args: PartitionArgs) -> Result<()> {
    let bundle = load_bundle(&args.matrix)
        .with_context(|| format!("cannot load bundle {}", args.matrix.display()))?;
    let spec = PartitionSpec { clients: args.clients, alpha: args.alpha, seed: args.seed };
    let global_p = bundle.matrix.label_distribution();
    let shards = partition_clients(&bundle.matrix, &spec, &global_p)?;
    save_manifest(&args.out, &shards)?;

    let mut manifest = RunManifest::new(
        "partition",
        args.seed,
        serde_json::json!({
            "matrix": args.matrix.display().to_string(),
            "clients": args.clients,
            "alpha": args.alpha,
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.matrix.join("matrix.txt"))?;
    manifest.add_output(&args.out);
    manifest.save(&sibling_manifest_path(&args.out))?;

    for shard in &shards {
        println!(
            "client {}: {} docs, label mix {:?}",
            shard.client_id,
            shard.columns.len(),
            shard.label_mix
        );
    }
    Ok(())
}

fn sibling_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let file_config = TrainFileConfig::load(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let matrix_dir = resolve(&base, &file_config.matrix);
    let shards_path = resolve(&base, &file_config.shards);

    let bundle = load_bundle(&matrix_dir)
        .with_context(|| format!("cannot load bundle {}", matrix_dir.display()))?;
    let shards = load_manifest(&shards_path, &bundle.matrix)
        .with_context(|| format!("cannot load shards {}", shards_path.display()))?;
    let config = file_config.to_run_config(shards.len(), args.seed)?;

    fs::create_dir_all(&args.out_dir)?;
    let mut manifest = RunManifest::new(
        "train",
        config.master_seed,
        serde_json::json!({
            "matrix": matrix_dir.display().to_string(),
            "shards": shards_path.display().to_string(),
            "run": &config,
            "threads": args.threads,
            "checkpoint_every": args.checkpoint_every,
        }),
    );
    manifest.add_input(&args.config)?;
    manifest.add_input(&matrix_dir.join("matrix.txt"))?;
    manifest.add_input(&shards_path)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("cannot build worker pool")?;

    let (mut server, mut clients) = federation::setup(&bundle.matrix, &shards, &config)?;
    let metrics_path = args.out_dir.join("metrics.jsonl");
    let mut metrics_file = BufWriter::new(fs::File::create(&metrics_path)?);
    let baseline = federation::baseline_metrics(&server, &clients, &config)?;
    writeln!(metrics_file, "{}", metrics_line(&baseline))?;
    metrics_file.flush()?;

    let checkpoints_dir = args.out_dir.join("checkpoints");
    let mut last = baseline;
    for round in 1..=config.rounds {
        let metrics = pool.install(|| federation::run_round(&mut server, &mut clients, &config))?;
        writeln!(metrics_file, "{}", metrics_line(&metrics))?;
        metrics_file.flush()?;
        if let Some(every) = args.checkpoint_every {
            if every > 0 && round % every == 0 {
                fs::create_dir_all(&checkpoints_dir)?;
                server
                    .w_master
                    .save(&checkpoints_dir.join(format!("model_round_{round:05}.txt")))?;
                server
                    .critic_master
                    .save(&checkpoints_dir.join(format!("critic_round_{round:05}.txt")))?;
            }
        }
        last = metrics;
    }

    let model_path = args.out_dir.join("model.txt");
    server.w_master.save(&model_path)?;
    let critic_path = args.out_dir.join("critic.txt");
    server.critic_master.save(&critic_path)?;

    let flagged: HashSet<usize> = bundle.flagged.iter().copied().collect();
    let factors: Vec<_> = clients.iter().map(|c| c.factors.clone()).collect();
    let mut features = FeatureSet { doc_ids: Vec::new(), labels: Vec::new(), vectors: Vec::new() };
    for (global, vector) in collect_topic_features(&shards, &factors) {
        if flagged.contains(&global) {
            continue;
        }
        features.doc_ids.push(bundle.matrix.doc_ids()[global].clone());
        features.labels.push(bundle.matrix.labels()[global]);
        features.vectors.push(vector);
    }
    let features_path = args.out_dir.join("features.txt");
    save_features(&features_path, &features)?;

    for path in [&metrics_path, &model_path, &critic_path, &features_path] {
        manifest.add_output(path);
    }
    manifest.save(&args.out_dir.join("manifest.json"))?;
    println!(
        "trained {} rounds in {:.1}s: final_recon_loss={} comm_bytes={}",
        config.rounds,
        started.elapsed().as_secs_f64(),
        last.mean_recon_loss,
        last.cumulative_comm_bytes
    );
    Ok(())
}

#[derive(Serialize)]
struct CoherenceReportFile<'a> {
    config_hash: &'a str,
    top_words_per_topic: usize,
    skipped_embedding_lines: usize,
    #[serde(flatten)]
    report: &'a TopicReport,
}

#[derive(Serialize)]
struct ClassificationReportFile<'a> {
    config_hash: &'a str,
    fold_in: bool,
    #[serde(flatten)]
    report: &'a ClassificationReport,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = TopicModel::load(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let vocab = corpus::Vocabulary::load(&args.vocab)
        .with_context(|| format!("cannot load vocabulary {}", args.vocab.display()))?;
    if vocab.len() != model.v() {
        bail!(
            "vocabulary has {} terms but the checkpoint was trained on {}",
            vocab.len(),
            model.v()
        );
    }
    let run_coherence = matches!(args.mode, EvalMode::Coherence | EvalMode::Both);
    let run_classify = matches!(args.mode, EvalMode::Classify | EvalMode::Both);
    if run_coherence && args.embeddings.is_none() {
        bail!("coherence evaluation requires --embeddings");
    }
    if run_classify && args.features.is_none() && !(args.fold_in && args.matrix.is_some()) {
        bail!("classification requires --features, or --fold-in with --matrix");
    }

    let mut manifest = RunManifest::new(
        "eval",
        args.seed,
        serde_json::json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "vocab": args.vocab.display().to_string(),
            "mode": match args.mode {
                EvalMode::Coherence => "coherence",
                EvalMode::Classify => "classify",
                EvalMode::Both => "both",
            },
            "embeddings": args.embeddings.as_ref().map(|p| p.display().to_string()),
            "features": args.features.as_ref().map(|p| p.display().to_string()),
            "matrix": args.matrix.as_ref().map(|p| p.display().to_string()),
            "fold_in": args.fold_in,
            "top_words": args.top_words,
            "split_ratio": args.split_ratio,
            "seed": args.seed,
            "epochs": args.epochs,
            "lr": args.lr,
            "fold_in_iters": args.fold_in_iters,
        }),
    );
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.vocab)?;
    let config_hash = manifest.config_hash();
    fs::create_dir_all(&args.out_dir)?;

    let mut coherence_value = None;
    if run_coherence {
        let embeddings_path = args.embeddings.as_ref().expect("checked above");
        manifest.add_input(embeddings_path)?;
        let table = load_embeddings(embeddings_path)?;
        let report = model_coherence(&model, &vocab, &table, args.top_words)?;
        let path = args.out_dir.join("coherence.json");
        write_json(
            &path,
            &CoherenceReportFile {
                config_hash: &config_hash,
                top_words_per_topic: args.top_words,
                skipped_embedding_lines: table.skipped_lines,
                report: &report,
            },
        )?;
        manifest.add_output(&path);
        coherence_value = Some(report.mean_coherence);
    }

    let mut classify_values = None;
    if run_classify {
        let features = if args.fold_in {
            let matrix_dir = args.matrix.as_ref().expect("checked above");
            manifest.add_input(&matrix_dir.join("matrix.txt"))?;
            fold_in_features(&model, matrix_dir, args.fold_in_iters)?
        } else {
            let path = args.features.as_ref().expect("checked above");
            manifest.add_input(path)?;
            load_features(path)?
        };
        let report = train_classifier(
            &features.vectors,
            &features.labels,
            args.split_ratio,
            args.seed,
            args.epochs,
            args.lr,
        )?;
        let path = args.out_dir.join("classification.json");
        write_json(
            &path,
            &ClassificationReportFile { config_hash: &config_hash, fold_in: args.fold_in, report: &report },
        )?;
        manifest.add_output(&path);
        classify_values = Some((report.macro_f1, report.accuracy));
    }

    manifest.save(&args.out_dir.join("manifest.json"))?;
    match (coherence_value, classify_values) {
        (Some(c), Some((f1, acc))) => println!("coherence={c} macro_f1={f1} acc={acc}"),
        (Some(c), None) => println!("coherence={c}"),
        (None, Some((f1, acc))) => println!("macro_f1={f1} acc={acc}"),
        (None, None) => unreachable!("mode always selects an evaluation"),
    }
    Ok(())
}

fn fold_in_features(model: &TopicModel, matrix_dir: &Path, iters: usize) -> Result<FeatureSet> {
    let bundle = load_bundle(matrix_dir)
        .with_context(|| format!("cannot load bundle {}", matrix_dir.display()))?;
    if bundle.matrix.v() != model.v() {
        bail!(
            "bundle has {} terms but the checkpoint was trained on {}",
            bundle.matrix.v(),
            model.v()
        );
    }
    let flagged: HashSet<usize> = bundle.flagged.iter().copied().collect();
    let eta = infer_step_size(model);
    let mut features = FeatureSet { doc_ids: Vec::new(), labels: Vec::new(), vectors: Vec::new() };
    for j in 0..bundle.matrix.n() {
        if flagged.contains(&j) {
            continue;
        }
        features.doc_ids.push(bundle.matrix.doc_ids()[j].clone());
        features.labels.push(bundle.matrix.labels()[j]);
        features.vectors.push(infer_topics(model, bundle.matrix.column(j), iters, eta));
    }
    if features.vectors.is_empty() {
        bail!("every document in {} is empty after vectorization", matrix_dir.display());
    }
    Ok(features)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

struct CellOutcome {
    final_metrics: RoundMetrics,
    coherence: Option<f64>,
    macro_f1: Option<f64>,
    accuracy: Option<f64>,
}

fn run_cell(
    bundle: &Bundle,
    cell: &SweepCell,
    sweep: &SweepConfig,
    embeddings: Option<&EmbeddingTable>,
    threads: usize,
) -> Result<CellOutcome> {
    let spec = PartitionSpec { clients: cell.clients, alpha: cell.alpha, seed: cell.seed };
    let shards = partition_clients(&bundle.matrix, &spec, &bundle.matrix.label_distribution())?;
    let config = FedRunConfig {
        clients: cell.clients,
        participation: sweep.base.participation,
        rounds: sweep.base.rounds,
        topics: cell.topics,
        sgd: fednmf_core::SgdConfig {
            eta: cell.eta,
            lambda: cell.lambda,
            batch_size: cell.batch_size,
            epochs: cell.epochs,
        },
        aggregator: cell.aggregator.clone(),
        server_lr: sweep.base.server_lr,
        beta1: sweep.base.beta1,
        beta2: sweep.base.beta2,
        adapt_eps: sweep.base.adapt_eps,
        master_seed: cell.seed,
    };
    config
        .validate()
        .map_err(|problems| anyhow::anyhow!("invalid cell: {}", problems.join("; ")))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let outcome = pool.install(|| federation::run_training(&bundle.matrix, &shards, &config))?;
    let final_metrics = outcome.metrics.last().expect("at least the baseline").clone();

    let mut coherence = None;
    if let Some(table) = embeddings {
        let eval = sweep.eval.as_ref().expect("embeddings imply eval section");
        let report = model_coherence(&outcome.model, &bundle.vocab, table, eval.top_words)?;
        coherence = Some(report.mean_coherence);
    }
    let mut macro_f1 = None;
    let mut accuracy = None;
    if let Some(eval) = &sweep.eval {
        if eval.classify {
            let flagged: HashSet<usize> = bundle.flagged.iter().copied().collect();
            let mut vectors = Vec::new();
            let mut labels = Vec::new();
            for (global, vector) in collect_topic_features(&shards, &outcome.factors) {
                if flagged.contains(&global) {
                    continue;
                }
                vectors.push(vector);
                labels.push(bundle.matrix.labels()[global]);
            }
            let report = train_classifier(
                &vectors,
                &labels,
                eval.split_ratio,
                eval.seed,
                eval.epochs,
                eval.lr,
            )?;
            macro_f1 = Some(report.macro_f1);
            accuracy = Some(report.accuracy);
        }
    }
    Ok(CellOutcome { final_metrics, coherence, macro_f1, accuracy })
}

const SWEEP_HEADER: &str = "lambda,topics,batch_size,epochs,eta,aggregator,alpha,clients,seed,\
                            status,final_recon_loss,final_mi_estimate,cumulative_comm_bytes,\
                            coherence,macro_f1,accuracy,error";

fn cell_row(cell: &SweepCell, outcome: &Result<CellOutcome>) -> String {
    let prefix = format!(
        "{},{},{},{},{},{},{},{},{}",
        cell.lambda,
        cell.topics,
        cell.batch_size,
        cell.epochs,
        cell.eta,
        cell.aggregator,
        cell.alpha,
        cell.clients,
        cell.seed
    );
    match outcome {
        Ok(out) => {
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            format!(
                "{prefix},ok,{},{},{},{},{},{},",
                out.final_metrics.mean_recon_loss,
                out.final_metrics.mean_mi_estimate,
                out.final_metrics.cumulative_comm_bytes,
                opt(out.coherence),
                opt(out.macro_f1),
                opt(out.accuracy)
            )
        }
        Err(err) => {
            let message = format!("{err:#}").replace([',', '\n'], ";");
            format!("{prefix},error,,,,,,,{message}")
        }
    }
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let sweep_config = SweepConfig::load(&args.grid)?;
    let base = args.grid.parent().unwrap_or(Path::new(".")).to_path_buf();
    let matrix_dir = resolve(&base, &sweep_config.matrix);
    let bundle = load_bundle(&matrix_dir)
        .with_context(|| format!("cannot load bundle {}", matrix_dir.display()))?;
    let embeddings = match sweep_config.eval.as_ref().and_then(|e| e.embeddings.as_ref()) {
        Some(path) => Some(load_embeddings(&resolve(&base, path))?),
        None => None,
    };
    let cells = expand_cells(&sweep_config.base, &sweep_config.grid);
    if cells.is_empty() {
        bail!("sweep grid is empty");
    }

    let out_file = fs::File::create(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut out = BufWriter::new(out_file);
    writeln!(out, "{SWEEP_HEADER}")?;

    if args.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(args.parallel).build()?;
        let rows: Vec<String> = pool.install(|| {
            use rayon::prelude::*;
            cells
                .par_iter()
                .map(|cell| {
                    let outcome =
                        run_cell(&bundle, cell, &sweep_config, embeddings.as_ref(), args.threads);
                    cell_row(cell, &outcome)
                })
                .collect()
        });
        for row in rows {
            writeln!(out, "{row}")?;
        }
    } else {
        for cell in &cells {
            let outcome = run_cell(&bundle, cell, &sweep_config, embeddings.as_ref(), args.threads);
            writeln!(out, "{}", cell_row(cell, &outcome))?;
            out.flush()?;
        }
    }
    out.flush()?;

    let mut manifest = RunManifest::new(
        "sweep",
        sweep_config.base.seed,
        serde_json::json!({
            "grid": args.grid.display().to_string(),
            "cells": cells.len(),
            "parallel": args.parallel,
            "threads": args.threads,
        }),
    );
    manifest.add_input(&args.grid)?;
    manifest.add_input(&matrix_dir.join("matrix.txt"))?;
    manifest.add_output(&args.out);
    manifest.save(&sibling_manifest_path(&args.out))?;
    println!("swept {} cells into {}", cells.len(), args.out.display());
    Ok(())
}
