//! Sentence vectors and cosine similarity for the semantic-adequacy reward.
//!
//! Token vectors come either from a word-vector text file or from a
//! deterministic PPMI + truncated SVD factorisation of windowed
//! co-occurrence counts over the training corpus.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::text::TokenSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Vec<f64>,
    idf: HashMap<String, f64>,
    default_idf: f64,
}

/// Result of parsing a word-vector file: the table plus any duplicate words
/// (with the line of the occurrence that was kept).
#[derive(Debug)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    pub duplicates: Vec<(usize, String)>,
}

impl EmbeddingTable {
    fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Self {
        let mut index = HashMap::with_capacity(rows.len());
        let mut words = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (w, v) in rows {
            debug_assert_eq!(v.len(), dim);
            index.insert(w.clone(), words.len());
            words.push(w);
            vectors.extend(v);
        }
        EmbeddingTable {
            dim,
            index,
            words,
            vectors,
            idf: HashMap::new(),
            default_idf: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(self.default_idf)
    }

    /// Sets smoothed idf weights `ln((1 + N) / (1 + df)) + 1` from a corpus.
    /// Tokens never seen in the corpus get the `df = 0` weight.
    pub fn with_idf(mut self, corpus: &[TokenSequence]) -> Self {
        let n = corpus.len() as f64;
        let mut df: HashMap<&str, usize> = HashMap::new();
        for sent in corpus {
            let mut seen: Vec<&str> = sent.iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        self.idf = df
            .into_iter()
            .map(|(t, d)| (t.to_string(), ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        self.default_idf = (1.0 + n).ln() + 1.0;
        self
    }

    /// Parses `token v1 ... vd` lines. The first non-blank line fixes `d`.
    pub fn parse(text: &str) -> Result<LoadedEmbeddings> {
        let mut dim = None;
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        let mut pos: HashMap<String, usize> = HashMap::new();
        let mut duplicates = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|p| match p.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::parse(line_no, format!("bad vector value {p:?}"))),
                })
                .collect::<Result<Vec<f64>>>()?;
            let d = *dim.get_or_insert(values.len());
            if d == 0 {
                return Err(Error::parse(line_no, "word vector has no values"));
            }
            if values.len() != d {
                return Err(Error::parse(
                    line_no,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            if let Some(&at) = pos.get(word) {
                warn!("duplicate word vector for {word:?} at line {line_no}; keeping the last one");
                duplicates.push((line_no, word.to_string()));
                rows[at].1 = values;
            } else {
                pos.insert(word.to_string(), rows.len());
                rows.push((word.to_string(), values));
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(0, "no word vectors found"))?;
        Ok(LoadedEmbeddings {
            table: EmbeddingTable::from_rows(dim, rows),
            duplicates,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::write(path, e))
    }
}

/// Loads a word-vector text file.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(EmbeddingTable::parse(&text)?.table)
}

/// Symmetric-window co-occurrence counts, positive PMI, rank-`dim` SVD, rows
/// scaled by the square root of the singular values. Word and context
/// vectors are averaged. Fully deterministic.
pub fn train_ppmi_svd(corpus: &[TokenSequence], dim: usize, window: usize) -> Result<EmbeddingTable> {
    if corpus.iter().all(TokenSequence::is_empty) {
        return Err(Error::Invalid("cannot train embeddings on an empty corpus".into()));
    }
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for sent in corpus {
        for t in sent.iter() {
            ids.entry(t).or_insert(0);
        }
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    let n = ids.len();
    if dim == 0 || dim > n {
        return Err(Error::Invalid(format!(
            "embedding dimension {dim} must be in 1..={n} (distinct tokens)"
        )));
    }
    let mut cooc = DMatrix::<f64>::zeros(n, n);
    for sent in corpus {
        let toks: Vec<usize> = sent.iter().map(|t| ids[t]).collect();
        for (i, &w) in toks.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(toks.len() - 1);
            for (j, &c) in toks.iter().enumerate().take(hi + 1).skip(lo) {
                if j != i {
                    cooc[(w, c)] += 1.0;
                }
            }
        }
    }
    let row_sums: Vec<f64> = (0..n).map(|i| cooc.row(i).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let mut ppmi = DMatrix::<f64>::zeros(n, n);
    if total > 0.0 {
        for i in 0..n {
            for j in 0..n {
                let c = cooc[(i, j)];
                if c > 0.0 {
                    let pmi = (c * total / (row_sums[i] * row_sums[j])).ln();
                    ppmi[(i, j)] = pmi.max(0.0);
                }
            }
        }
    }
    let svd = ppmi.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut rows: Vec<(String, Vec<f64>)> = ids
        .keys()
        .map(|w| (w.to_string(), Vec::with_capacity(dim)))
        .collect();
    for &k in order.iter().take(dim) {
        // (u + v) / 2 keeps the positive-eigenvalue directions of the
        // symmetric PPMI matrix; for negative eigenvalues u = -v and the
        // component cancels.
        let col: Vec<f64> = u
            .column(k)
            .iter()
            .zip(v_t.row(k).iter())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = svd.singular_values[k].sqrt() * sign;
        for (row, &v) in rows.iter_mut().zip(&col) {
            row.1.push(v * scale);
        }
    }
    Ok(EmbeddingTable::from_rows(dim, rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVector(pub Vec<f64>);

impl SentenceVector {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// idf-weighted mean of in-table token vectors; zero when nothing is in the table.
pub fn sentence_vector(table: &EmbeddingTable, tokens: &TokenSequence) -> SentenceVector {
    let mut acc = vec![0.0; table.dim()];
    let mut weight = 0.0;
    for t in tokens.iter() {
        if let Some(v) = table.vector(t) {
            let w = table.idf(t);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += w * x;
            }
            weight += w;
        }
    }
    if weight > 0.0 {
        for a in &mut acc {
            *a /= weight;
        }
    }
    SentenceVector(acc)
}

/// Cosine similarity clamped to [0, 1]; 0 if either vector is zero.
pub fn semantic_similarity(a: &SentenceVector, b: &SentenceVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        semantic_similarity(&SentenceVector(a.to_vec()), &SentenceVector(b.to_vec()))
    }

    #[test]
    fn parse_word_vectors() {
        let loaded = EmbeddingTable::parse("cat 1 2 3\ndog 4 5 6\n").unwrap();
        assert_eq!(loaded.table.len(), 2);
        assert_eq!(loaded.table.dim(), 3);
        assert_eq!(loaded.table.vector("dog").unwrap(), &[4.0, 5.0, 6.0]);

        let err = EmbeddingTable::parse("cat 1 2 3\ndog 4 5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(EmbeddingTable::parse("cat 1 x 3\n").is_err());
        assert!(EmbeddingTable::parse("").is_err());
        assert!(EmbeddingTable::parse("cat\n").is_err());
        assert!(EmbeddingTable::parse("cat NaN\n").is_err());
    }

    #[test]
    fn duplicate_words_keep_the_last_row() {
        let loaded = EmbeddingTable::parse("a 1 0\nb 0 1\na 2 2\n").unwrap();
        assert_eq!(loaded.table.len(), 2);
        assert_eq!(loaded.table.vector("a").unwrap(), &[2.0, 2.0]);
        assert_eq!(loaded.duplicates, vec![(3, "a".to_string())]);
    }

    #[test]
    fn write_parse_round_trip() {
        let t = EmbeddingTable::parse("a 0.1 -2.5e-3\nb 3 4\n").unwrap().table;
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = EmbeddingTable::parse(std::str::from_utf8(&buf).unwrap()).unwrap().table;
        assert_eq!(back, t);
    }

    #[test]
    fn sentence_vector_examples() {
        let t = EmbeddingTable::parse("a 1 0\nb 0 1\n").unwrap().table;
        assert_eq!(sentence_vector(&t, &tokenize("a")).0, vec![1.0, 0.0]);
        assert!(sentence_vector(&t, &tokenize("zz yy")).is_zero());
        assert!(sentence_vector(&t, &tokenize("")).is_zero());
        assert_eq!(sentence_vector(&t, &tokenize("a b zz")).0, vec![0.5, 0.5]);
    }

    #[test]
    fn idf_weights_rare_tokens_more() {
        let corpus: Vec<_> = ["a b", "a c", "a d"].iter().map(|s| tokenize(s)).collect();
        let t = EmbeddingTable::parse("a 1 0\nb 0 1\n").unwrap().table.with_idf(&corpus);
        assert!(t.idf("b") > t.idf("a"));
        assert!(t.idf("a") >= 1.0);
        let v = sentence_vector(&t, &tokenize("a b"));
        assert!(v.0[1] > v.0[0]);
    }

    #[test]
    fn similarity_examples() {
        assert!((cos(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cos(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cos(&[1.0, 0.0], &[-1.0, 0.0]), 0.0);
        assert_eq!(cos(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cos(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn ppmi_pairs_tokens_that_share_contexts() {
        let mut corpus = Vec::new();
        for _ in 0..5 {
            corpus.push(tokenize("a b"));
            corpus.push(tokenize("c d e"));
            corpus.push(tokenize("e f c"));
        }
        let t = train_ppmi_svd(&corpus, 4, 5).unwrap();
        let v = |w: &str| t.vector(w).unwrap().to_vec();
        let ab = cos(&v("a"), &v("b"));
        for other in ["c", "d", "e", "f"] {
            assert!(ab > cos(&v("a"), &v(other)), "a~b vs a~{other}");
            assert!(ab > cos(&v("b"), &v(other)));
        }
    }

    #[test]
    fn ppmi_is_deterministic_and_validates_dim() {
        let corpus: Vec<_> = ["the cat sat", "the dog sat", "a cat ran"].iter().map(|s| tokenize(s)).collect();
        let t1 = train_ppmi_svd(&corpus, 3, 2).unwrap();
        let t2 = train_ppmi_svd(&corpus, 3, 2).unwrap();
        let (mut b1, mut b2) = (Vec::new(), Vec::new());
        t1.write_to(&mut b1).unwrap();
        t2.write_to(&mut b2).unwrap();
        assert_eq!(b1, b2);
        assert!(train_ppmi_svd(&corpus, 7, 2).is_err());
        assert!(train_ppmi_svd(&[], 1, 2).is_err());
    }
}
