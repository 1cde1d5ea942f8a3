//! Corpus ingestion: tokenization, vocabularies, and sparse count matrices.
//!
//! Documents arrive as labeled raw text (`label<TAB>text`, one per line) and
//! leave as columns of a sparse token-by-document count matrix bound to a
//! vocabulary. All operations are pure and deterministic.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no token survived vocabulary construction (min_count {min_count})")]
    EmptyVocabulary { min_count: usize },
    #[error("split ratio {ratio} leaves an empty side for {n} documents")]
    DegenerateSplit { ratio: f64, n: usize },
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error("corpus line {line} is malformed: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("matrix file is malformed: {0}")]
    MalformedMatrix(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled raw-text document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Dense class id in `0..l`.
    pub label: usize,
}

/// Ordered set of distinct tokens with a token → index map.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for t in &self.terms {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_terms(
            text.lines().map(|l| l.to_string()).collect(),
        ))
    }
}

/// Sparse token-by-document count matrix with label and id bindings.
///
/// Columns are documents. Counts produced by [`vectorize`] are positive
/// integers; the value type is `f64` so synthetic dense matrices (used by
/// recovery experiments) fit the same interfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    v: usize,
    /// Per column: `(term index, count)` sorted by ascending term index.
    columns: Vec<Vec<(u32, f64)>>,
    doc_ids: Vec<String>,
    labels: Vec<usize>,
}

impl CountMatrix {
    pub fn from_columns(
        v: usize,
        columns: Vec<Vec<(u32, f64)>>,
        doc_ids: Vec<String>,
        labels: Vec<usize>,
    ) -> Self {
        assert_eq!(columns.len(), doc_ids.len());
        assert_eq!(columns.len(), labels.len());
        for col in &columns {
            debug_assert!(col.windows(2).all(|w| w[0].0 < w[1].0));
            debug_assert!(col.iter().all(|&(i, c)| (i as usize) < v && c > 0.0));
        }
        Self { v, columns, doc_ids, labels }
    }

    /// Builds a matrix from dense columns, dropping zero entries.
    pub fn from_dense_columns(v: usize, dense: &[Vec<f64>]) -> Self {
        let columns = dense
            .iter()
            .map(|col| {
                assert_eq!(col.len(), v);
                col.iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(i, &x)| (i as u32, x))
                    .collect()
            })
            .collect();
        let doc_ids = (0..dense.len()).map(|j| format!("d{j}")).collect();
        let labels = vec![0; dense.len()];
        Self { v, columns, doc_ids, labels }
    }

    pub fn v(&self) -> usize {
        self.v
    }

    /// Number of documents (columns).
    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[(u32, f64)] {
        &self.columns[j]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of label classes, as `max(label) + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Empirical label distribution over `num_classes` classes.
    pub fn label_distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes()];
        for &l in &self.labels {
            p[l] += 1.0;
        }
        let n = self.n() as f64;
        for x in &mut p {
            *x /= n;
        }
        p
    }

    /// Mean entry of the dense view, `sum(counts) / (V * N)`.
    pub fn mean_entry(&self) -> f64 {
        let total: f64 = self.columns.iter().flatten().map(|&(_, c)| c).sum();
        total / (self.v as f64 * self.n() as f64)
    }

    /// New matrix holding the given columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            v: self.v,
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            doc_ids: cols.iter().map(|&j| self.doc_ids[j].clone()).collect(),
            labels: cols.iter().map(|&j| self.labels[j]).collect(),
        }
    }

    /// Serializes to the plain-text format: header `V N`, then one line per
    /// column `j nnz idx:count ...`.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{} {}", self.v, self.n())?;
        for (j, col) in self.columns.iter().enumerate() {
            let mut line = format!("{} {}", j, col.len());
            for &(idx, count) in col {
                write!(line, " {idx}:{count}").expect("write to string");
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the format written by [`CountMatrix::save`]. Ids and labels are
    /// not part of the matrix file; the returned matrix has placeholder ids
    /// and zero labels (see [`save_bundle`] for the full on-disk bundle).
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CorpusError::MalformedMatrix("empty file".into()))?;
        let mut it = header.split_whitespace();
        let v: usize = parse_field(it.next(), "V")?;
        let n: usize = parse_field(it.next(), "N")?;
        let mut columns = Vec::with_capacity(n);
        for (lineno, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let j: usize = parse_field(parts.next(), "column index")?;
            if j != lineno {
                return Err(CorpusError::MalformedMatrix(format!(
                    "column {lineno} labeled {j}"
                )));
            }
            let nnz: usize = parse_field(parts.next(), "nnz")?;
            let mut col = Vec::with_capacity(nnz);
            for entry in parts {
                let (idx, count) = entry.split_once(':').ok_or_else(|| {
                    CorpusError::MalformedMatrix(format!("entry `{entry}` lacks `:`"))
                })?;
                let idx: u32 = idx
                    .parse()
                    .map_err(|_| CorpusError::MalformedMatrix(format!("bad index `{idx}`")))?;
                let count: f64 = count
                    .parse()
                    .map_err(|_| CorpusError::MalformedMatrix(format!("bad count `{count}`")))?;
                if (idx as usize) >= v {
                    return Err(CorpusError::MalformedMatrix(format!(
                        "index {idx} out of range for V={v}"
                    )));
                }
                col.push((idx, count));
            }
            if col.len() != nnz {
                return Err(CorpusError::MalformedMatrix(format!(
                    "column {j}: declared {nnz} entries, found {}",
                    col.len()
                )));
            }
            columns.push(col);
        }
        if columns.len() != n {
            return Err(CorpusError::MalformedMatrix(format!(
                "declared {n} columns, found {}",
                columns.len()
            )));
        }
        let doc_ids = (0..n).map(|j| format!("d{j}")).collect();
        let labels = vec![0; n];
        Ok(Self { v, columns, doc_ids, labels })
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    what: &str,
) -> Result<T, CorpusError> {
    field
        .ok_or_else(|| CorpusError::MalformedMatrix(format!("missing {what}")))?
        .parse()
        .map_err(|_| CorpusError::MalformedMatrix(format!("unparseable {what}")))
}

/// Lowercases, splits on non-alphanumeric runs, and drops stopwords and
/// single-character tokens.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() > 1)
        .filter(|t| !stopwords.contains(*t))
        .map(|t| t.to_string())
        .collect()
}

/// Collects the tokens whose total occurrence count is at least `min_count`,
/// ordered by first appearance.
pub fn build_vocabulary(
    docs: &[Document],
    stopwords: &HashSet<String>,
    min_count: usize,
) -> Result<Vocabulary, CorpusError> {
    assert!(min_count >= 1, "min_count must be at least 1");
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for doc in docs {
        for tok in tokenize(&doc.text, stopwords) {
            let entry = counts.entry(tok.clone()).or_insert(0);
            if *entry == 0 {
                order.push(tok);
            }
            *entry += 1;
        }
    }
    let terms: Vec<String> = order
        .into_iter()
        .filter(|t| counts[t] >= min_count)
        .collect();
    if terms.is_empty() {
        return Err(CorpusError::EmptyVocabulary { min_count });
    }
    Ok(Vocabulary::from_terms(terms))
}

/// Counts in-vocabulary tokens per document. Documents whose column comes out
/// empty are kept (so columns stay aligned with labels) and their indices are
/// returned in the flag list.
pub fn vectorize(
    docs: &[Document],
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
) -> Result<(CountMatrix, Vec<usize>), CorpusError> {
    if vocab.is_empty() {
        return Err(CorpusError::EmptyVocab);
    }
    let mut columns = Vec::with_capacity(docs.len());
    let mut flagged = Vec::new();
    for (j, doc) in docs.iter().enumerate() {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for tok in tokenize(&doc.text, stopwords) {
            if let Some(idx) = vocab.index_of(&tok) {
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        let mut col: Vec<(u32, f64)> =
            counts.into_iter().map(|(i, c)| (i as u32, c)).collect();
        col.sort_unstable_by_key(|&(i, _)| i);
        if col.is_empty() {
            flagged.push(j);
        }
        columns.push(col);
    }
    let doc_ids = docs.iter().map(|d| d.id.clone()).collect();
    let labels = docs.iter().map(|d| d.label).collect();
    Ok((
        CountMatrix::from_columns(vocab.len(), columns, doc_ids, labels),
        flagged,
    ))
}

/// Splits columns into train/test sets of sizes `round(ratio*N)` and the
/// rest, using a seeded shuffle. Selected columns keep ascending order.
pub fn split_train_test(
    matrix: &CountMatrix,
    ratio: f64,
    seed: u64,
) -> Result<(CountMatrix, CountMatrix), CorpusError> {
    assert!(ratio > 0.0 && ratio < 1.0, "ratio must lie in (0, 1)");
    let n = matrix.n();
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(CorpusError::DegenerateSplit { ratio, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((matrix.select_columns(&train), matrix.select_columns(&test)))
}

/// Parses a `label<TAB>text` corpus file. Label strings are mapped to dense
/// ids in sorted order; the returned map lists the label string per id.
pub fn read_corpus(path: &Path) -> Result<(Vec<Document>, Vec<String>), CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| {
            CorpusError::MalformedLine {
                line: lineno + 1,
                reason: "expected `label<TAB>text`".into(),
            }
        })?;
        raw.push((label.to_string(), body.to_string(), lineno));
    }
    let mut classes: Vec<String> = raw.iter().map(|(l, _, _)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    let class_id: HashMap<&String, usize> =
        classes.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let docs = raw
        .iter()
        .map(|(label, body, lineno)| Document {
            id: format!("d{lineno}"),
            text: body.clone(),
            label: class_id[label],
        })
        .collect();
    Ok((docs, classes))
}

/// Reads a stopword file (one token per line, lowercased on load).
pub fn read_stopwords(path: &Path) -> Result<HashSet<String>, CorpusError> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.to_lowercase())
        .collect())
}

/// On-disk bundle produced by `prepare`: the matrix in its documented format
/// plus sibling files carrying the vocabulary and bindings.
pub struct Bundle {
    pub matrix: CountMatrix,
    pub vocab: Vocabulary,
    pub classes: Vec<String>,
    pub flagged: Vec<usize>,
}

pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    bundle.matrix.save(&dir.join("matrix.txt"))?;
    bundle.vocab.save(&dir.join("vocab.txt"))?;
    let ids: String = bundle
        .matrix
        .doc_ids()
        .iter()
        .map(|s| format!("{s}\n"))
        .collect();
    fs::write(dir.join("doc_ids.txt"), ids)?;
    let labels: String = bundle
        .matrix
        .labels()
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.join("labels.txt"), labels)?;
    let classes: String = bundle.classes.iter().map(|c| format!("{c}\n")).collect();
    fs::write(dir.join("classes.txt"), classes)?;
    let flagged: String = bundle.flagged.iter().map(|j| format!("{j}\n")).collect();
    fs::write(dir.join("flagged.txt"), flagged)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<Bundle, CorpusError> {
    let bare = CountMatrix::load(&dir.join("matrix.txt"))?;
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    let doc_ids: Vec<String> = fs::read_to_string(dir.join("doc_ids.txt"))?
        .lines()
        .map(|l| l.to_string())
        .collect();
    let labels: Vec<usize> = fs::read_to_string(dir.join("labels.txt"))?
        .lines()
        .map(|l| {
            l.parse()
                .map_err(|_| CorpusError::MalformedMatrix(format!("bad label `{l}`")))
        })
        .collect::<Result<_, _>>()?;
    let classes: Vec<String> = fs::read_to_string(dir.join("classes.txt"))?
        .lines()
        .map(|l| l.to_string())
        .collect();
    let flagged: Vec<usize> = fs::read_to_string(dir.join("flagged.txt"))?
        .lines()
        .map(|l| {
            l.parse()
                .map_err(|_| CorpusError::MalformedMatrix(format!("bad flag `{l}`")))
        })
        .collect::<Result<_, _>>()?;
    if doc_ids.len() != bare.n() || labels.len() != bare.n() {
        return Err(CorpusError::MalformedMatrix(
            "id/label files disagree with matrix size".into(),
        ));
    }
    let matrix = CountMatrix::from_columns(
        bare.v(),
        (0..bare.n()).map(|j| bare.column(j).to_vec()).collect(),
        doc_ids,
        labels,
    );
    Ok(Bundle { matrix, vocab, classes, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str, label: usize) -> Document {
        Document { id: id.into(), text: text.into(), label }
    }

    fn set(words: &[&str]) -> HashSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_lowercases_and_drops_stopwords() {
        assert_eq!(tokenize("The cat SAT.", &set(&["the"])), vec!["cat", "sat"]);
    }

    #[test]
    fn tokenize_empty_input() {
        assert_eq!(tokenize("", &set(&[])), Vec::<String>::new());
    }

    #[test]
    fn tokenize_keeps_alphanumeric_runs() {
        // "a" is both a stopword and single-character; either rule removes it.
        assert_eq!(tokenize("a b2b a", &set(&["a"])), vec!["b2b"]);
    }

    #[test]
    fn vocabulary_counts_total_occurrences() {
        let docs = [doc("a", "xx xx yy", 0), doc("b", "yy", 0)];
        let vocab = build_vocabulary(&docs, &set(&[]), 2).unwrap();
        assert_eq!(vocab.terms(), &["xx".to_string(), "yy".to_string()]);
    }

    #[test]
    fn vocabulary_empty_when_nothing_survives() {
        let docs = [doc("a", "xx", 0)];
        assert!(matches!(
            build_vocabulary(&docs, &set(&[]), 2),
            Err(CorpusError::EmptyVocabulary { .. })
        ));
    }

    #[test]
    fn vocabulary_appearance_order() {
        let docs = [doc("a", "xx yy", 0), doc("b", "zz", 0)];
        let vocab = build_vocabulary(&docs, &set(&[]), 1).unwrap();
        assert_eq!(
            vocab.terms(),
            &["xx".to_string(), "yy".to_string(), "zz".to_string()]
        );
        assert_eq!(vocab.index_of("zz"), Some(2));
    }

    #[test]
    fn vectorize_counts_in_vocab_tokens() {
        let vocab = Vocabulary::from_terms(vec!["xx".into(), "yy".into(), "zz".into()]);
        let (m, flagged) =
            vectorize(&[doc("a", "xx xx yy", 0)], &vocab, &set(&[])).unwrap();
        assert_eq!(m.column(0), &[(0, 2.0), (1, 1.0)]);
        assert!(flagged.is_empty());
    }

    #[test]
    fn vectorize_flags_out_of_vocab_documents() {
        let vocab = Vocabulary::from_terms(vec!["xx".into()]);
        let (m, flagged) = vectorize(&[doc("a", "qq", 0)], &vocab, &set(&[])).unwrap();
        assert!(m.column(0).is_empty());
        assert_eq!(flagged, vec![0]);
    }

    #[test]
    fn vectorize_is_deterministic() {
        let vocab = Vocabulary::from_terms(vec!["xx".into(), "yy".into()]);
        let docs = [doc("a", "yy xx yy", 0), doc("b", "yy xx yy", 1)];
        let (m, _) = vectorize(&docs, &vocab, &set(&[])).unwrap();
        assert_eq!(m.column(0), m.column(1));
        let (m2, _) = vectorize(&docs, &vocab, &set(&[])).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let cols = vec![vec![(0u32, 1.0)]; 10];
        let ids = (0..10).map(|i| format!("d{i}")).collect();
        let m = CountMatrix::from_columns(1, cols, ids, vec![0; 10]);
        let (train, test) = split_train_test(&m, 0.8, 1).unwrap();
        assert_eq!((train.n(), test.n()), (8, 2));
    }

    #[test]
    fn split_smallest_legal() {
        let m = CountMatrix::from_columns(
            1,
            vec![vec![(0, 1.0)], vec![(0, 2.0)]],
            vec!["a".into(), "b".into()],
            vec![0, 1],
        );
        let (train, test) = split_train_test(&m, 0.5, 3).unwrap();
        assert_eq!((train.n(), test.n()), (1, 1));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let cols = (0..20).map(|i| vec![(i as u32 % 3, 1.0)]).collect::<Vec<_>>();
        let ids: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let m = CountMatrix::from_columns(3, cols, ids, vec![0; 20]);
        let (tr1, te1) = split_train_test(&m, 0.7, 9).unwrap();
        let (tr2, te2) = split_train_test(&m, 0.7, 9).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        let mut ids: Vec<&String> = tr1.doc_ids().iter().chain(te1.doc_ids()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn split_rejects_degenerate() {
        let m = CountMatrix::from_columns(1, vec![vec![(0, 1.0)]], vec!["a".into()], vec![0]);
        assert!(matches!(
            split_train_test(&m, 0.5, 0),
            Err(CorpusError::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = CountMatrix::from_columns(
            4,
            vec![vec![(0, 2.0), (3, 1.0)], vec![], vec![(2, 5.0)]],
            vec!["a".into(), "b".into(), "c".into()],
            vec![0, 1, 0],
        );
        m.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "4 3\n0 2 0:2 3:1\n1 0\n2 1 2:5\n");
        let loaded = CountMatrix::load(&path).unwrap();
        assert_eq!(loaded.v(), 4);
        assert_eq!(loaded.column(0), m.column(0));
        assert_eq!(loaded.column(1), m.column(1));
        assert_eq!(loaded.column(2), m.column(2));
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let docs = [doc("a", "xx yy", 0), doc("b", "qq", 1)];
        let vocab = build_vocabulary(&docs[..1], &set(&[]), 1).unwrap();
        let (matrix, flagged) = vectorize(&docs, &vocab, &set(&[])).unwrap();
        let bundle = Bundle {
            matrix,
            vocab,
            classes: vec!["ham".into(), "spam".into()],
            flagged,
        };
        save_bundle(dir.path(), &bundle).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.matrix, bundle.matrix);
        assert_eq!(loaded.vocab.terms(), bundle.vocab.terms());
        assert_eq!(loaded.classes, bundle.classes);
        assert_eq!(loaded.flagged, vec![1]);
    }

    #[test]
    fn read_corpus_maps_labels_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        fs::write(&path, "spam\tbuy now\nham\thello there\nspam\tfree offer\n").unwrap();
        let (docs, classes) = read_corpus(&path).unwrap();
        assert_eq!(classes, vec!["ham".to_string(), "spam".to_string()]);
        assert_eq!(docs[0].label, 1);
        assert_eq!(docs[1].label, 0);
        assert_eq!(docs[1].id, "d1");
    }

    proptest! {
        /// Total counts in the matrix equal the number of in-vocab token
        /// occurrences in the input.
        #[test]
        fn vectorize_conserves_counts(texts in proptest::collection::vec("[a-c ]{0,24}", 1..8)) {
            let docs: Vec<Document> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| doc(&format!("d{i}"), t, 0))
                .collect();
            let stop = set(&[]);
            // Vocabulary from the first half only, so some tokens fall out of vocab.
            if let Ok(vocab) = build_vocabulary(&docs[..docs.len().div_ceil(2)], &stop, 1) {
                let (m, _) = vectorize(&docs, &vocab, &stop).unwrap();
                let total: f64 = (0..m.n()).flat_map(|j| m.column(j)).map(|&(_, c)| c).sum();
                let expected: usize = docs
                    .iter()
                    .flat_map(|d| tokenize(&d.text, &stop))
                    .filter(|t| vocab.index_of(t).is_some())
                    .count();
                prop_assert_eq!(total as usize, expected);
            }
        }

        /// Union of split column ids is the original set; intersection empty.
        #[test]
        fn split_partitions_columns(n in 2usize..40, ratio in 0.05f64..0.95, seed in 0u64..1000) {
            let cols = (0..n).map(|i| vec![(i as u32 % 5, 1.0 + i as f64)]).collect::<Vec<_>>();
            let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let m = CountMatrix::from_columns(5, cols, ids, vec![0; n]);
            match split_train_test(&m, ratio, seed) {
                Ok((train, test)) => {
                    prop_assert_eq!(train.n() + test.n(), n);
                    let mut all: Vec<&String> = train.doc_ids().iter().chain(test.doc_ids()).collect();
                    all.sort();
                    all.dedup();
                    prop_assert_eq!(all.len(), n);
                }
                Err(CorpusError::DegenerateSplit { .. }) => {
                    let n_train = (ratio * n as f64).round() as usize;
                    prop_assert!(n_train == 0 || n_train == n);
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected {e}"))),
            }
        }
    }
}
