//! Topic-weight feature files: `doc_id label v1 ... vk`, one document per
//! line, in global column order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

pub struct FeatureSet {
    pub doc_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn save_features(path: &Path, features: &FeatureSet) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for ((id, label), vector) in features.doc_ids.iter().zip(&features.labels).zip(&features.vectors) {
        let values: Vec<String> = vector.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{id} {label} {}", values.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut doc_ids = Vec::new();
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .with_context(|| format!("feature line {} is empty", lineno + 1))?;
        let label: usize = parts
            .next()
            .with_context(|| format!("feature line {} lacks a label", lineno + 1))?
            .parse()
            .with_context(|| format!("feature line {} has a bad label", lineno + 1))?;
        let vector: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("feature line {} has bad values", lineno + 1))?;
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                bail!("feature line {} has {} values, expected {d}", lineno + 1, vector.len())
            }
            _ => {}
        }
        doc_ids.push(id.to_string());
        labels.push(label);
        vectors.push(vector);
    }
    if vectors.is_empty() {
        bail!("feature file {} is empty", path.display());
    }
    Ok(FeatureSet { doc_ids, labels, vectors })
}
