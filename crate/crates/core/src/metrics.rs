//! Reference-based metrics: BLEU, i-BLEU, ROUGE-N, and the inverse-BLEU
//! diversity term used by the reward.
//!
//! All functions are generic over the token type so they work on both
//! token strings and vocabulary ids.

use std::collections::HashMap;
use std::hash::Hash;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuConfig {
    /// Highest n-gram order, in `1..=4`.
    pub max_n: usize,
    /// Add-one smoothing on orders >= 2 when some higher-order match count is zero.
    pub smoothing: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: true,
        }
    }
}

impl BleuConfig {
    pub fn new(max_n: usize, smoothing: bool) -> Self {
        assert!((1..=4).contains(&max_n), "BLEU order must be in 1..=4");
        BleuConfig { max_n, smoothing }
    }
}

pub const DEFAULT_IBLEU_ALPHA: f64 = 0.9;

fn ngram_counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || seq.len() < n {
        return counts;
    }
    for gram in seq.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// (clipped matches, total candidate n-grams) for one order.
fn clipped_matches<T: Hash + Eq, R: AsRef<[T]>>(candidate: &[T], references: &[R], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    if cand.is_empty() {
        return (0, 0);
    }
    let total = candidate.len() + 1 - n;
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r.as_ref(), n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, total)
}

/// Clipped n-gram precision; 0 when the candidate has no n-grams.
pub fn modified_ngram_precision<T: Hash + Eq, R: AsRef<[T]>>(candidate: &[T], references: &[R], n: usize) -> f64 {
    assert!(n >= 1);
    let (m, t) = clipped_matches(candidate, references, n);
    if t == 0 {
        0.0
    } else {
        m as f64 / t as f64
    }
}

/// Length of the reference closest to `cand_len`; ties go to the shorter one.
fn closest_ref_len<T, R: AsRef<[T]>>(cand_len: usize, references: &[R]) -> usize {
    references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .unwrap_or(0)
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

fn combine(matches: &[(usize, usize)], bp: f64, smoothing: bool) -> f64 {
    if bp == 0.0 || matches[0].0 == 0 {
        return 0.0;
    }
    let smooth = smoothing && matches[1..].iter().any(|&(m, _)| m == 0);
    let mut log_sum = 0.0;
    for (k, &(m, t)) in matches.iter().enumerate() {
        let p = if k >= 1 && smooth {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    bp * (log_sum / matches.len() as f64).exp()
}

/// Sentence-level BLEU. `references` must be non-empty.
pub fn bleu<T: Hash + Eq, R: AsRef<[T]>>(candidate: &[T], references: &[R], config: BleuConfig) -> f64 {
    assert!(!references.is_empty(), "BLEU needs at least one reference");
    if candidate.is_empty() {
        return 0.0;
    }
    let matches: Vec<_> = (1..=config.max_n)
        .map(|n| clipped_matches(candidate, references, n))
        .collect();
    let bp = brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references));
    combine(&matches, bp, config.smoothing)
}

/// Corpus-level BLEU: statistics are summed over segments before combining.
pub fn corpus_bleu<T, C, R>(segments: &[(C, Vec<R>)], config: BleuConfig) -> f64
where
    T: Hash + Eq,
    C: AsRef<[T]>,
    R: AsRef<[T]>,
{
    let mut matches = vec![(0usize, 0usize); config.max_n];
    let mut cand_len = 0;
    let mut ref_len = 0;
    for (cand, refs) in segments {
        let cand = cand.as_ref();
        for (n, slot) in matches.iter_mut().enumerate() {
            let (m, t) = clipped_matches(cand, refs, n + 1);
            slot.0 += m;
            slot.1 += t;
        }
        cand_len += cand.len();
        ref_len += closest_ref_len(cand.len(), refs);
    }
    combine(&matches, brevity_penalty(cand_len, ref_len), config.smoothing)
}

/// `alpha * BLEU(cand, refs) - (1 - alpha) * BLEU(cand, [source])`.
pub fn i_bleu<T: Hash + Eq, R: AsRef<[T]>>(
    candidate: &[T],
    references: &[R],
    source: &[T],
    alpha: f64,
    config: BleuConfig,
) -> f64 {
    alpha * bleu(candidate, references, config) - (1.0 - alpha) * bleu(candidate, &[source], config)
}

/// ROUGE-N recall, maximised over references.
pub fn rouge_n<T: Hash + Eq, R: AsRef<[T]>>(candidate: &[T], references: &[R], n: usize) -> f64 {
    assert!(!references.is_empty(), "ROUGE needs at least one reference");
    let cand = ngram_counts(candidate, n);
    references
        .iter()
        .map(|r| {
            let r = r.as_ref();
            let refc = ngram_counts(r, n);
            let total: usize = refc.values().sum();
            if total == 0 {
                return 0.0;
            }
            let hit: usize = refc
                .iter()
                .map(|(g, &c)| c.min(cand.get(g).copied().unwrap_or(0)))
                .sum();
            hit as f64 / total as f64
        })
        .fold(0.0, f64::max)
}

/// Mean of `1 - BLEU_n(candidate, [source])` for n = 1 and 2, where `BLEU_n`
/// uses only the order-n precision times the brevity penalty.
pub fn diversity_inverse_bleu<T: Hash + Eq>(source: &[T], candidate: &[T]) -> f64 {
    let refs = [source];
    let bp = brevity_penalty(candidate.len(), source.len());
    let inv = |n| 1.0 - bp * modified_ngram_precision(candidate, &refs, n);
    0.5 * (inv(1) + inv(2))
}
