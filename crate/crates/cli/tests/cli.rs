//! End-to-end pipeline tests against the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fednmf"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Three-class corpus with class-specific words plus one stopword-only
/// document that vectorizes empty.
fn write_corpus(path: &Path, docs_per_class: usize) {
    let class_words = [
        ["apple", "pear", "plum", "grape", "melon"],
        ["engine", "wheel", "brake", "clutch", "gear"],
        ["violin", "cello", "flute", "oboe", "drum"],
    ];
    let shared = ["report", "study", "note"];
    let mut lines = Vec::new();
    for i in 0..docs_per_class {
        for (c, words) in class_words.iter().enumerate() {
            let text = format!(
                "{} {} {} {} the of",
                words[i % 5],
                words[(i + 2) % 5],
                words[(i * 3 + 1) % 5],
                shared[i % 3]
            );
            lines.push(format!("class{c}\t{text}"));
        }
    }
    lines.push("class0\tthe of the of".to_string()); // stopwords only
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn write_stopwords(path: &Path) {
    fs::write(path, "the\nof\n").unwrap();
}

fn write_embeddings(path: &Path) {
    // Class words cluster per class; shared words sit between clusters.
    let mut lines = Vec::new();
    let clusters = [
        (["apple", "pear", "plum", "grape", "melon"], [1.0, 0.0, 0.0]),
        (["engine", "wheel", "brake", "clutch", "gear"], [0.0, 1.0, 0.0]),
        (["violin", "cello", "flute", "oboe", "drum"], [0.0, 0.0, 1.0]),
    ];
    for (i, (words, center)) in clusters.iter().enumerate() {
        for (j, word) in words.iter().enumerate() {
            let jitter = 0.05 * j as f64;
            lines.push(format!(
                "{word} {} {} {}",
                center[0] + jitter,
                center[1] + 0.02 * i as f64,
                center[2] + jitter * 0.5
            ));
        }
    }
    for (j, word) in ["report", "study", "note"].iter().enumerate() {
        lines.push(format!("{word} 0.5 0.5 {}", 0.3 + 0.1 * j as f64));
    }
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

struct Pipeline {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    bundle: PathBuf,
    shards: PathBuf,
    train_out: PathBuf,
    embeddings: PathBuf,
}

fn prepared_pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus.tsv");
    write_corpus(&corpus, 20); // 61 documents
    let stopwords = root.join("stopwords.txt");
    write_stopwords(&stopwords);
    let embeddings = root.join("embeddings.txt");
    write_embeddings(&embeddings);

    let bundle = root.join("bundle");
    assert_ok(&run(&[
        "prepare",
        "--corpus",
        corpus.to_str().unwrap(),
        "--stopwords",
        stopwords.to_str().unwrap(),
        "--out-dir",
        bundle.to_str().unwrap(),
        "--split",
        "0.8",
        "--seed",
        "7",
    ]));

    let shards = root.join("shards.txt");
    assert_ok(&run(&[
        "partition",
        "--matrix",
        bundle.to_str().unwrap(),
        "--clients",
        "3",
        "--alpha",
        "1.0",
        "--seed",
        "5",
        "--out",
        shards.to_str().unwrap(),
    ]));

    let config = root.join("run.toml");
    fs::write(
        &config,
        format!(
            "matrix = {:?}\nshards = {:?}\ntopics = 4\nrounds = 2\nparticipation = 1.0\n\n\
             [sgd]\neta = 0.05\nlambda = 0.1\nbatch_size = 16\nepochs = 2\n",
            bundle.file_name().unwrap().to_str().unwrap(),
            shards.file_name().unwrap().to_str().unwrap(),
        ),
    )
    .unwrap();
    let train_out = root.join("run");
    assert_ok(&run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        train_out.to_str().unwrap(),
        "--threads",
        "2",
    ]));
    Pipeline { dir, bundle, shards, train_out, embeddings }
}

#[test]
fn full_pipeline_produces_artifacts() {
    let p = prepared_pipeline();
    // Bundle files, including the 80/20 sub-bundles.
    for file in ["matrix.txt", "vocab.txt", "labels.txt", "doc_ids.txt", "classes.txt", "flagged.txt", "manifest.json"] {
        assert!(p.bundle.join(file).exists(), "missing {file}");
    }
    assert!(p.bundle.join("train/matrix.txt").exists());
    assert!(p.bundle.join("test/matrix.txt").exists());
    let header = fs::read_to_string(p.bundle.join("matrix.txt")).unwrap();
    let first = header.lines().next().unwrap();
    assert!(first.ends_with(" 61"), "header {first} should end with N=61");
    // One stopword-only document flagged.
    assert_eq!(fs::read_to_string(p.bundle.join("flagged.txt")).unwrap().lines().count(), 1);

    // Shards: 3 clients, floor(61/3) = 20 docs each.
    let shard_text = fs::read_to_string(&p.shards).unwrap();
    assert_eq!(shard_text.lines().count(), 3);
    for line in shard_text.lines() {
        let cols = line.split(": ").nth(1).unwrap();
        assert_eq!(cols.split(',').count(), 20);
    }

    // Train outputs: metrics (baseline + 2 rounds), checkpoints, features.
    let metrics = fs::read_to_string(p.train_out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["round"], 0);
    assert_eq!(first["cumulative_comm_bytes"], 0);
    assert!(p.train_out.join("model.txt").exists());
    assert!(p.train_out.join("critic.txt").exists());
    let features = fs::read_to_string(p.train_out.join("features.txt")).unwrap();
    // 60 of 61 documents were assigned (one leftover discarded); the flagged
    // document is dropped from the feature file if it was assigned.
    let n_features = features.lines().count();
    assert!((59..=60).contains(&n_features), "feature lines: {n_features}");
    let manifest = fs::read_to_string(p.train_out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"lambda\": 0.1"), "effective lambda echoed");
}

#[test]
fn prepare_is_deterministic_and_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    write_corpus(&corpus, 4);
    let out1 = dir.path().join("b1");
    let out2 = dir.path().join("b2");
    for out in [&out1, &out2] {
        assert_ok(&run(&["prepare", "--corpus", corpus.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]));
    }
    assert_eq!(
        fs::read(out1.join("matrix.txt")).unwrap(),
        fs::read(out2.join("matrix.txt")).unwrap()
    );

    let missing = dir.path().join("nope.tsv");
    let out = run(&["prepare", "--corpus", missing.to_str().unwrap(), "--out-dir", dir.path().join("b3").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("nope.tsv"),
        "diagnostic should name the path"
    );
}

#[test]
fn train_smoke_run_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("c.tsv");
    write_corpus(&corpus, 7); // 22 docs, close to the 20-doc smoke target
    let bundle = root.join("bundle");
    assert_ok(&run(&["prepare", "--corpus", corpus.to_str().unwrap(), "--out-dir", bundle.to_str().unwrap()]));
    let shards = root.join("shards.txt");
    assert_ok(&run(&[
        "partition", "--matrix", bundle.to_str().unwrap(),
        "--clients", "1", "--alpha", "1.0", "--out", shards.to_str().unwrap(),
    ]));
    let config = root.join("run.toml");
    fs::write(
        &config,
        "matrix = \"bundle\"\nshards = \"shards.txt\"\ntopics = 5\nrounds = 1\nparticipation = 1.0\n",
    )
    .unwrap();

    let started = Instant::now();
    let out_a = root.join("a");
    assert_ok(&run(&["train", "--config", config.to_str().unwrap(), "--out-dir", out_a.to_str().unwrap()]));
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "smoke run took {elapsed:?}");

    let out_b = root.join("b");
    assert_ok(&run(&["train", "--config", config.to_str().unwrap(), "--out-dir", out_b.to_str().unwrap()]));
    assert_eq!(
        fs::read(out_a.join("metrics.jsonl")).unwrap(),
        fs::read(out_b.join("metrics.jsonl")).unwrap(),
        "same config and seed must give byte-identical metrics"
    );
    assert_eq!(
        fs::read(out_a.join("model.txt")).unwrap(),
        fs::read(out_b.join("model.txt")).unwrap()
    );
}

#[test]
fn train_rejects_invalid_config_naming_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("c.tsv");
    write_corpus(&corpus, 4);
    let bundle = root.join("bundle");
    assert_ok(&run(&["prepare", "--corpus", corpus.to_str().unwrap(), "--out-dir", bundle.to_str().unwrap()]));
    let shards = root.join("shards.txt");
    assert_ok(&run(&[
        "partition", "--matrix", bundle.to_str().unwrap(),
        "--clients", "2", "--alpha", "1.0", "--out", shards.to_str().unwrap(),
    ]));
    let config = root.join("bad.toml");
    fs::write(
        &config,
        "matrix = \"bundle\"\nshards = \"shards.txt\"\ntopics = 0\nrounds = 2\nparticipation = 0.0\n",
    )
    .unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap(), "--out-dir", root.join("x").to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("participation (C)"), "stderr: {stderr}");
    assert!(stderr.contains("topics"), "stderr: {stderr}");
}

#[test]
fn eval_reports_and_summary_lines() {
    let p = prepared_pipeline();
    let out_dir = p.train_out.join("eval");
    let out = run(&[
        "eval",
        "--checkpoint", p.train_out.join("model.txt").to_str().unwrap(),
        "--vocab", p.bundle.join("vocab.txt").to_str().unwrap(),
        "--mode", "both",
        "--embeddings", p.embeddings.to_str().unwrap(),
        "--features", p.train_out.join("features.txt").to_str().unwrap(),
        "--top-words", "3",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout.lines().last().unwrap();
    assert!(summary.starts_with("coherence="), "summary: {summary}");
    assert!(summary.contains(" macro_f1="), "summary: {summary}");
    assert!(summary.contains(" acc="), "summary: {summary}");
    let coherence: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("coherence.json")).unwrap()).unwrap();
    assert!(coherence["mean_coherence"].is_number());
    assert!(coherence["config_hash"].is_string());
    let classification: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("classification.json")).unwrap())
            .unwrap();
    assert!(classification["macro_f1"].is_number());
    assert!(classification["accuracy"].is_number());

    // Coherence mode without embeddings is a usage error.
    let out = run(&[
        "eval",
        "--checkpoint", p.train_out.join("model.txt").to_str().unwrap(),
        "--vocab", p.bundle.join("vocab.txt").to_str().unwrap(),
        "--mode", "coherence",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--embeddings"));

    // Single-class features surface as a nonzero exit.
    let single = p.train_out.join("single.txt");
    fs::write(&single, "d0 1 0.5 0.5 0.5 0.5\nd1 1 0.25 0.5 0.5 0.5\nd2 1 0.1 0.2 0.3 0.4\n").unwrap();
    let out = run(&[
        "eval",
        "--checkpoint", p.train_out.join("model.txt").to_str().unwrap(),
        "--vocab", p.bundle.join("vocab.txt").to_str().unwrap(),
        "--mode", "classify",
        "--features", single.to_str().unwrap(),
        "--split-ratio", "0.5",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("two classes"));
}

#[test]
fn eval_fold_in_uses_held_out_split() {
    let p = prepared_pipeline();
    let out_dir = p.train_out.join("eval_fold");
    let out = run(&[
        "eval",
        "--checkpoint", p.train_out.join("model.txt").to_str().unwrap(),
        "--vocab", p.bundle.join("vocab.txt").to_str().unwrap(),
        "--mode", "classify",
        "--fold-in",
        "--matrix", p.bundle.join("test").to_str().unwrap(),
        "--fold-in-iters", "200",
        "--split-ratio", "0.5",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("classification.json")).unwrap())
            .unwrap();
    assert_eq!(report["fold_in"], true);
}

#[test]
fn sweep_tabulates_the_grid() {
    let p = prepared_pipeline();
    let root = p.train_out.parent().unwrap();
    let grid = root.join("grid.toml");
    fs::write(
        &grid,
        "matrix = \"bundle\"\n\n[base]\ntopics = 3\nrounds = 1\nclients = 2\nparticipation = 1.0\n\n\
         [base.sgd]\nbatch_size = 16\nepochs = 1\n\n\
         [grid]\nlambda = [0.0, 0.1]\nseed = [1, 2]\n\n\
         [eval]\nclassify = true\nsplit_ratio = 0.5\n",
    )
    .unwrap();
    let table = root.join("sweep.csv");
    assert_ok(&run(&["sweep", "--grid", grid.to_str().unwrap(), "--out", table.to_str().unwrap()]));
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "header plus 4 cells:\n{text}");
    assert!(lines[0].starts_with("lambda,topics,"));
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[9], "ok", "row: {row}");
        assert!(fields[14].parse::<f64>().is_ok(), "macro_f1 column: {row}");
    }
    // Cells are deterministic, so a parallel sweep gives the same table.
    let table2 = root.join("sweep2.csv");
    assert_ok(&run(&[
        "sweep", "--grid", grid.to_str().unwrap(), "--out", table2.to_str().unwrap(),
        "--parallel", "2",
    ]));
    assert_eq!(fs::read(&table).unwrap(), fs::read(&table2).unwrap());
}
