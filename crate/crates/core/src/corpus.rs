//! Bag-of-words corpus ingestion, the column-sparse covariate-sample count
//! matrix, vocabulary pruning, and token-level heldout splits.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Ordered covariate identifiers; the index space is dense 0..V-1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &terms {
            if !seen.insert(t) {
                return Err(Error::Parameter(format!("duplicate covariate identifier: {t}")));
            }
        }
        Ok(Vocabulary { terms })
    }

    pub fn synthetic(v: usize) -> Self {
        Vocabulary {
            terms: (1..=v).map(|i| format!("term{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, v: usize) -> &str {
        &self.terms[v]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Column-sparse V x J count matrix. Each column holds (covariate, count)
/// pairs sorted by covariate index; zero counts are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCountMatrix {
    v: usize,
    cols: Vec<Vec<(u32, u32)>>,
    col_sums: Vec<u64>,
}

impl SparseCountMatrix {
    pub fn from_triples(v: usize, j: usize, triples: &[(u32, u32, u32)]) -> Result<Self> {
        let mut cols: Vec<Vec<(u32, u32)>> = vec![Vec::new(); j];
        for &(term, doc, count) in triples {
            if term as usize >= v {
                return Err(Error::Parameter(format!(
                    "covariate index {term} out of range (V = {v})"
                )));
            }
            if doc as usize >= j {
                return Err(Error::Parameter(format!("sample index {doc} out of range (J = {j})")));
            }
            if count == 0 {
                continue;
            }
            cols[doc as usize].push((term, count));
        }
        let mut dupes = 0usize;
        for col in &mut cols {
            col.sort_unstable_by_key(|&(t, _)| t);
            let mut merged: Vec<(u32, u32)> = Vec::with_capacity(col.len());
            for &(t, c) in col.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == t => {
                        last.1 += c;
                        dupes += 1;
                    }
                    _ => merged.push((t, c)),
                }
            }
            *col = merged;
        }
        if dupes > 0 {
            log::warn!("merged {dupes} duplicate (covariate, sample) entries");
        }
        let col_sums = cols
            .iter()
            .map(|c| c.iter().map(|&(_, n)| n as u64).sum())
            .collect();
        Ok(SparseCountMatrix { v, cols, col_sums })
    }

    pub fn empty(v: usize, j: usize) -> Self {
        SparseCountMatrix {
            v,
            cols: vec![Vec::new(); j],
            col_sums: vec![0; j],
        }
    }

    pub fn num_covariates(&self) -> usize {
        self.v
    }

    pub fn num_samples(&self) -> usize {
        self.cols.len()
    }

    /// Sorted (covariate, count) pairs of sample j.
    pub fn column(&self, j: usize) -> &[(u32, u32)] {
        &self.cols[j]
    }

    /// n_j: token count of sample j.
    pub fn column_sum(&self, j: usize) -> u64 {
        self.col_sums[j]
    }

    /// n_..: total token count.
    pub fn total_count(&self) -> u64 {
        self.col_sums.iter().sum()
    }

    /// Number of stored nonzero cells.
    pub fn nnz(&self) -> usize {
        self.cols.iter().map(|c| c.len()).sum()
    }

    pub fn count(&self, v: u32, j: usize) -> u32 {
        match self.cols[j].binary_search_by_key(&v, |&(t, _)| t) {
            Ok(i) => self.cols[j][i].1,
            Err(_) => 0,
        }
    }

    /// Per-covariate document frequency (number of samples containing it).
    pub fn doc_frequencies(&self) -> Vec<u32> {
        let mut df = vec![0u32; self.v];
        for col in &self.cols {
            for &(t, _) in col {
                df[t as usize] += 1;
            }
        }
        df
    }
}

/// Token-level train/test split of a count matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeldoutSplit {
    pub train: SparseCountMatrix,
    pub test: SparseCountMatrix,
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BowFormat {
    UciBow,
    TermDocTriples,
}

impl std::str::FromStr for BowFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uci-bow" => Ok(BowFormat::UciBow),
            "term-doc-triples" => Ok(BowFormat::TermDocTriples),
            other => Err(Error::Parameter(format!(
                "unknown corpus format {other:?} (expected uci-bow or term-doc-triples)"
            ))),
        }
    }
}

/// Load a bag-of-words corpus.
///
/// * `uci-bow`: three header lines (J, V, NNZ) followed by whitespace-separated
///   `docID termID count` triples, 1-based indices.
/// * `term-doc-triples`: CSV `term,doc,count` rows, 1-based indices, with an
///   optional vocabulary sidecar (one term per line).
///
/// When no sidecar is given, covariate names are synthesized as `term<i>`.
pub fn load_bow(
    path: &Path,
    format: BowFormat,
    vocab_path: Option<&Path>,
) -> Result<(Vocabulary, SparseCountMatrix)> {
    let text = std::fs::read_to_string(path)?;
    let (v, j, triples) = match format {
        BowFormat::UciBow => parse_uci(&text)?,
        BowFormat::TermDocTriples => parse_triples(&text)?,
    };
    let vocab = match vocab_path {
        Some(p) => {
            let vt = std::fs::read_to_string(p)?;
            let terms: Vec<String> = vt.lines().map(|l| l.trim().to_string()).collect();
            if terms.len() != v {
                return Err(Error::Parse {
                    line: terms.len(),
                    msg: format!("vocabulary sidecar has {} terms but corpus declares V = {v}", terms.len()),
                });
            }
            Vocabulary::new(terms)?
        }
        None => Vocabulary::synthetic(v),
    };
    let matrix = SparseCountMatrix::from_triples(v, j, &triples)?;
    Ok((vocab, matrix))
}

fn parse_field(tok: &str, line: usize, what: &str) -> Result<u64> {
    tok.parse::<u64>().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from {tok:?}"),
    })
}

fn parse_uci(text: &str) -> Result<(usize, usize, Vec<(u32, u32, u32)>)> {
    let mut lines = text.lines().enumerate();
    let mut header = [0u64; 3];
    for slot in 0..3 {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: slot + 1, msg: "missing header line".into() })?;
        header[slot] = parse_field(line.trim(), idx + 1, "header value")?;
    }
    let (j, v, nnz) = (header[0] as usize, header[1] as usize, header[2] as usize);
    let mut triples = Vec::with_capacity(nnz);
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let doc = parse_field(parts.next().unwrap_or(""), idx + 1, "docID")?;
        let term = parse_field(
            parts.next().ok_or_else(|| Error::Parse { line: idx + 1, msg: "missing termID".into() })?,
            idx + 1,
            "termID",
        )?;
        let count = parse_field(
            parts.next().ok_or_else(|| Error::Parse { line: idx + 1, msg: "missing count".into() })?,
            idx + 1,
            "count",
        )?;
        if parts.next().is_some() {
            return Err(Error::Parse { line: idx + 1, msg: "trailing fields".into() });
        }
        if doc == 0 || term == 0 {
            return Err(Error::Parse { line: idx + 1, msg: "indices are 1-based".into() });
        }
        if doc as usize > j || term as usize > v {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("index out of declared range (doc {doc} of {j}, term {term} of {v})"),
            });
        }
        triples.push((term as u32 - 1, doc as u32 - 1, count as u32));
    }
    if triples.len() != nnz {
        return Err(Error::Parse {
            line: 3,
            msg: format!("header declares {nnz} entries, file has {}", triples.len()),
        });
    }
    Ok((v, j, triples))
}

fn parse_triples(text: &str) -> Result<(usize, usize, Vec<(u32, u32, u32)>)> {
    let mut triples = Vec::new();
    let (mut v_max, mut j_max) = (0u64, 0u64);
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected term,doc,count — got {} fields", parts.len()),
            });
        }
        let term = parse_field(parts[0], idx + 1, "term")?;
        let doc = parse_field(parts[1], idx + 1, "doc")?;
        let count = parse_field(parts[2], idx + 1, "count")?;
        if doc == 0 || term == 0 {
            return Err(Error::Parse { line: idx + 1, msg: "indices are 1-based".into() });
        }
        v_max = v_max.max(term);
        j_max = j_max.max(doc);
        triples.push((term as u32 - 1, doc as u32 - 1, count as u32));
    }
    Ok((v_max as usize, j_max as usize, triples))
}

/// Canonical uci-bow serialization: header lines J, V, NNZ, then triples
/// sorted by (doc, term). `write_bow(load_bow(x))` is bit-identical for
/// canonicalized files.
pub fn format_bow(matrix: &SparseCountMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", matrix.num_samples());
    let _ = writeln!(out, "{}", matrix.num_covariates());
    let _ = writeln!(out, "{}", matrix.nnz());
    for j in 0..matrix.num_samples() {
        for &(t, c) in matrix.column(j) {
            let _ = writeln!(out, "{} {} {}", j + 1, t + 1, c);
        }
    }
    out
}

pub fn write_bow(path: &Path, matrix: &SparseCountMatrix) -> Result<()> {
    std::fs::write(path, format_bow(matrix))?;
    Ok(())
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for t in vocab.terms() {
        let _ = writeln!(out, "{t}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Drop covariates occurring in fewer than `min_doc_freq` distinct samples
/// and re-densify the index space.
pub fn prune_vocabulary(
    vocab: &Vocabulary,
    matrix: &SparseCountMatrix,
    min_doc_freq: u32,
) -> Result<(Vocabulary, SparseCountMatrix)> {
    if min_doc_freq < 1 {
        return Err(Error::Parameter("min_doc_freq must be >= 1".into()));
    }
    let df = matrix.doc_frequencies();
    let mut remap = vec![u32::MAX; matrix.num_covariates()];
    let mut kept_terms = Vec::new();
    for (old, &f) in df.iter().enumerate() {
        if f >= min_doc_freq {
            remap[old] = kept_terms.len() as u32;
            kept_terms.push(vocab.term(old).to_string());
        }
    }
    if kept_terms.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let v_new = kept_terms.len();
    let mut triples = Vec::new();
    for j in 0..matrix.num_samples() {
        for &(t, c) in matrix.column(j) {
            let nt = remap[t as usize];
            if nt != u32::MAX {
                triples.push((nt, j as u32, c));
            }
        }
    }
    Ok((
        Vocabulary::new(kept_terms)?,
        SparseCountMatrix::from_triples(v_new, matrix.num_samples(), &triples)?,
    ))
}

/// Split each sample's tokens into train/test without replacement. The train
/// size per sample is round(fraction * n_j), at least 1 whenever n_j >= 1.
/// Each sample uses a derived RNG stream, so the split is reproducible and
/// independent of scheduling.
pub fn split_heldout(
    matrix: &SparseCountMatrix,
    fraction: f64,
    rng: &RngStream,
) -> Result<HeldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("train fraction must lie in (0,1), got {fraction}")));
    }
    let v = matrix.num_covariates();
    let j_total = matrix.num_samples();
    let mut train_triples = Vec::new();
    let mut test_triples = Vec::new();
    for j in 0..j_total {
        let n_j = matrix.column_sum(j);
        if n_j == 0 {
            continue;
        }
        let target = ((fraction * n_j as f64).round() as u64).clamp(1, n_j);
        let mut stream = rng.derive(j as u64);
        let mut remaining_total = n_j;
        let mut remaining_train = target;
        for &(t, c) in matrix.column(j) {
            let mut to_train = 0u32;
            for _ in 0..c {
                // exact without-replacement: each remaining token goes to
                // train with probability remaining_train / remaining_total
                if remaining_train > 0
                    && stream.bernoulli(remaining_train as f64 / remaining_total as f64)
                {
                    to_train += 1;
                    remaining_train -= 1;
                }
                remaining_total -= 1;
            }
            if to_train > 0 {
                train_triples.push((t, j as u32, to_train));
            }
            if c - to_train > 0 {
                test_triples.push((t, j as u32, c - to_train));
            }
        }
    }
    Ok(HeldoutSplit {
        train: SparseCountMatrix::from_triples(v, j_total, &train_triples)?,
        test: SparseCountMatrix::from_triples(v, j_total, &test_triples)?,
        fraction,
        seed: rng.seed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_matrix() -> SparseCountMatrix {
        // 2 docs, 3 terms: (term,doc,count) = (1,1,2),(2,1,1),(3,2,4) in
        // 1-based labels -> 0-based triples below
        SparseCountMatrix::from_triples(3, 2, &[(0, 0, 2), (1, 0, 1), (2, 1, 4)]).unwrap()
    }

    #[test]
    fn triple_transcription() {
        let m = toy_matrix();
        assert_eq!(m.num_covariates(), 3);
        assert_eq!(m.num_samples(), 2);
        assert_eq!(m.column_sum(0), 3);
        assert_eq!(m.column_sum(1), 4);
        assert_eq!(m.total_count(), 7);
        assert_eq!(m.count(0, 0), 2);
        assert_eq!(m.count(2, 0), 0);
    }

    #[test]
    fn empty_document_allowed() {
        let m = SparseCountMatrix::from_triples(2, 3, &[(0, 0, 1), (1, 2, 2)]).unwrap();
        assert_eq!(m.num_samples(), 3);
        assert_eq!(m.column_sum(1), 0);
        assert!(m.column(1).is_empty());
    }

    #[test]
    fn duplicate_cells_merge() {
        let m = SparseCountMatrix::from_triples(2, 1, &[(0, 0, 1), (0, 0, 2)]).unwrap();
        assert_eq!(m.count(0, 0), 3);
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn uci_parse_and_errors() {
        let good = "2\n3\n3\n1 1 2\n1 2 1\n2 3 4\n";
        let (v, j, triples) = parse_uci(good).unwrap();
        assert_eq!((v, j), (3, 2));
        assert_eq!(triples.len(), 3);

        let bad = "2\n3\n3\n1 1 2\n1 x 1\n2 3 4\n";
        match parse_uci(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = toy_matrix();
        let text = format_bow(&m);
        let (v, j, triples) = parse_uci(&text).unwrap();
        let m2 = SparseCountMatrix::from_triples(v, j, &triples).unwrap();
        assert_eq!(format_bow(&m2), text);
        assert_eq!(m, m2);
    }

    #[test]
    fn prune_identity_and_all_pruned() {
        let vocab = Vocabulary::synthetic(3);
        let m = toy_matrix();
        let (v1, m1) = prune_vocabulary(&vocab, &m, 1).unwrap();
        assert_eq!(v1.len(), 3);
        assert_eq!(m1, m);

        // every term appears in exactly 1 doc here; threshold 2 empties it
        assert!(matches!(
            prune_vocabulary(&vocab, &m, 2),
            Err(Error::EmptyVocabulary)
        ));
        assert!(prune_vocabulary(&vocab, &m, 0).is_err());
    }

    #[test]
    fn prune_boundary_doc_freq() {
        // covariate 0 appears in 4 docs, covariate 1 in 5 docs
        let mut triples = Vec::new();
        for j in 0..4u32 {
            triples.push((0u32, j, 1u32));
        }
        for j in 0..5u32 {
            triples.push((1u32, j, 2u32));
        }
        let vocab = Vocabulary::synthetic(2);
        let m = SparseCountMatrix::from_triples(2, 5, &triples).unwrap();
        let (v, pruned) = prune_vocabulary(&vocab, &m, 5).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.term(0), "term2");
        assert_eq!(pruned.num_covariates(), 1);
        assert_eq!(pruned.total_count(), 10);
    }

    #[test]
    fn prune_matches_brute_force_filter() {
        let mut r = RngStream::new(77);
        for trial in 0..20 {
            let (v, j) = (10usize, 8usize);
            let mut triples = Vec::new();
            for t in 0..v as u32 {
                for d in 0..j as u32 {
                    if r.bernoulli(0.3) {
                        triples.push((t, d, 1 + r.below(4) as u32));
                    }
                }
            }
            let vocab = Vocabulary::synthetic(v);
            let m = SparseCountMatrix::from_triples(v, j, &triples).unwrap();
            let threshold = 1 + (trial % 4) as u32;
            // independent recount of document frequencies
            let mut df = vec![0u32; v];
            for d in 0..j {
                for &(t, _) in m.column(d) {
                    df[t as usize] += 1;
                }
            }
            let expect: Vec<String> = (0..v)
                .filter(|&t| df[t] >= threshold)
                .map(|t| format!("term{}", t + 1))
                .collect();
            match prune_vocabulary(&vocab, &m, threshold) {
                Ok((pv, pm)) => {
                    assert_eq!(pv.terms(), expect.as_slice());
                    // counts preserved for retained terms
                    for (new_idx, name) in pv.terms().iter().enumerate() {
                        let old_idx: usize = name[4..].parse::<usize>().unwrap() - 1;
                        for d in 0..j {
                            assert_eq!(pm.count(new_idx as u32, d), m.count(old_idx as u32, d));
                        }
                    }
                }
                Err(Error::EmptyVocabulary) => assert!(expect.is_empty()),
                Err(e) => panic!("{e:?}"),
            }
        }
    }

    #[test]
    fn split_sizes_and_recomposition() {
        let rng = RngStream::new(5);
        // n_j = 10, fraction 0.3 -> exactly 3 training tokens
        let m = SparseCountMatrix::from_triples(4, 1, &[(0, 0, 4), (1, 0, 3), (3, 0, 3)]).unwrap();
        let split = split_heldout(&m, 0.3, &rng).unwrap();
        assert_eq!(split.train.column_sum(0), 3);
        assert_eq!(split.test.column_sum(0), 7);

        // fraction near 1 rounds up to everything
        let split = split_heldout(&m, 0.999, &rng).unwrap();
        assert_eq!(split.train.column_sum(0), 10);
        assert_eq!(split.test.column_sum(0), 0);

        assert!(split_heldout(&m, 0.0, &rng).is_err());
        assert!(split_heldout(&m, 1.0, &rng).is_err());
    }

    #[test]
    fn split_recomposes_cell_by_cell() {
        let mut seed_rng = RngStream::new(9);
        for trial in 0..100u64 {
            let (v, j) = (6usize, 5usize);
            let mut triples = Vec::new();
            for t in 0..v as u32 {
                for d in 0..j as u32 {
                    if seed_rng.bernoulli(0.4) {
                        triples.push((t, d, 1 + seed_rng.below(9) as u32));
                    }
                }
            }
            let m = SparseCountMatrix::from_triples(v, j, &triples).unwrap();
            let rng = RngStream::new(1000 + trial);
            let split = split_heldout(&m, 0.6, &rng).unwrap();
            for d in 0..j {
                for t in 0..v as u32 {
                    assert_eq!(
                        split.train.count(t, d) + split.test.count(t, d),
                        m.count(t, d),
                        "cell ({t},{d}) does not recompose"
                    );
                }
                let n = m.column_sum(d);
                if n >= 1 {
                    assert!(split.train.column_sum(d) >= 1);
                    assert_eq!(split.train.column_sum(d), ((0.6 * n as f64).round() as u64).clamp(1, n));
                }
            }
        }
    }

    #[test]
    fn split_is_seed_reproducible() {
        let m = toy_matrix();
        let a = split_heldout(&m, 0.5, &RngStream::new(4)).unwrap();
        let b = split_heldout(&m, 0.5, &RngStream::new(4)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn prune_and_split_restrict_consistently() {
        // Splitting the pruned matrix and restricting a split of the full
        // matrix to the retained terms must describe the same cell totals.
        // (Cell-level train assignments agree in distribution, not draw by
        // draw, because the per-sample train size is deterministic in n_j.)
        let mut gen = RngStream::new(31);
        let (v, j) = (8usize, 6usize);
        let mut triples = Vec::new();
        for t in 0..v as u32 {
            for d in 0..j as u32 {
                if gen.bernoulli(0.5) {
                    triples.push((t, d, 1 + gen.below(5) as u32));
                }
            }
        }
        let vocab = Vocabulary::synthetic(v);
        let m = SparseCountMatrix::from_triples(v, j, &triples).unwrap();

        let (pv, pm) = prune_vocabulary(&vocab, &m, 3).unwrap();
        let rng = RngStream::new(99);
        let sp_pruned = split_heldout(&pm, 0.5, &rng).unwrap();
        let sp_full = split_heldout(&m, 0.5, &rng).unwrap();
        for d in 0..j {
            for (new_idx, name) in pv.terms().iter().enumerate() {
                let old_idx: u32 = name[4..].parse::<u32>().unwrap() - 1;
                // totals recompose on both routes
                assert_eq!(
                    sp_pruned.train.count(new_idx as u32, d) + sp_pruned.test.count(new_idx as u32, d),
                    m.count(old_idx, d)
                );
                assert_eq!(
                    sp_full.train.count(old_idx, d) + sp_full.test.count(old_idx, d),
                    m.count(old_idx, d)
                );
            }
        }
    }
}
