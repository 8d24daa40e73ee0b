//! Test-pair files and the evaluation and reward-score tables.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{bleu, corpus_bleu, i_bleu, rouge_n, BleuConfig, DEFAULT_IBLEU_ALPHA};
use crate::reward::RewardBreakdown;
use crate::text::{tokenize, TokenSequence};

/// A source sentence with one or more references.
#[derive(Clone, Debug, PartialEq)]
pub struct TestPair {
    pub source: TokenSequence,
    pub references: Vec<TokenSequence>,
}

/// Parses `source<TAB>ref1<TAB>ref2...` lines. A trailing newline is
/// allowed; blank lines and empty fields are errors.
pub fn parse_pairs(text: &str) -> Result<Vec<TestPair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut fields = line.split('\t').map(tokenize);
        let source = fields.next().unwrap_or_default();
        let references: Vec<TokenSequence> = fields.collect();
        if source.is_empty() {
            return Err(Error::parse(line_no, "empty source sentence"));
        }
        if references.is_empty() {
            return Err(Error::parse(line_no, "expected at least one tab-separated reference"));
        }
        if references.iter().any(TokenSequence::is_empty) {
            return Err(Error::parse(line_no, "empty reference"));
        }
        pairs.push(TestPair { source, references });
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<TestPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Corpus-level scores, each multiplied by 100.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationRow {
    pub method: String,
    pub i_bleu: f64,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
}

/// Sentence-level scores, each multiplied by 100.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SentenceScores {
    pub line: usize,
    pub i_bleu: f64,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
}

pub const EVALUATION_HEADER: &str = "method,i_bleu,bleu,rouge1,rouge2";
pub const SENTENCE_HEADER: &str = "line,i_bleu,bleu,rouge1,rouge2";
pub const SCORE_HEADER: &str = "line,raw_sim,raw_flu,raw_div,gated_sim,gated_flu,gated_div,reward";

fn strings(seq: &TokenSequence) -> &[String] {
    seq.tokens()
}

/// Scores `outputs` against the references of `pairs`, aligned by line.
/// BLEU and i-BLEU are corpus-level; ROUGE is the mean over sentences.
pub fn evaluate(method: &str, outputs: &[TokenSequence], pairs: &[TestPair]) -> Result<(EvaluationRow, Vec<SentenceScores>)> {
    if method.is_empty() || method.contains([',', '"', '\n', '\r']) {
        return Err(Error::Invalid(format!("method name {method:?} must be non-empty plain text")));
    }
    if outputs.len() != pairs.len() {
        return Err(Error::Invalid(format!(
            "{} outputs but {} test pairs; line {} has no counterpart",
            outputs.len(),
            pairs.len(),
            outputs.len().min(pairs.len()) + 1
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let cfg = BleuConfig::default();
    let alpha = DEFAULT_IBLEU_ALPHA;
    let mut per_sentence = Vec::with_capacity(outputs.len());
    let mut to_refs = Vec::with_capacity(outputs.len());
    let mut to_source = Vec::with_capacity(outputs.len());
    for (k, (out, pair)) in outputs.iter().zip(pairs).enumerate() {
        let cand = strings(out);
        let refs: Vec<&[String]> = pair.references.iter().map(strings).collect();
        let src = strings(&pair.source);
        per_sentence.push(SentenceScores {
            line: k + 1,
            i_bleu: 100.0 * i_bleu(cand, &refs, src, alpha, cfg),
            bleu: 100.0 * bleu(cand, &refs, cfg),
            rouge1: 100.0 * rouge_n(cand, &refs, 1),
            rouge2: 100.0 * rouge_n(cand, &refs, 2),
        });
        to_refs.push((cand, refs));
        to_source.push((cand, vec![src]));
    }
    let n = per_sentence.len() as f64;
    let corpus = corpus_bleu(&to_refs, cfg);
    let row = EvaluationRow {
        method: method.to_string(),
        i_bleu: 100.0 * (alpha * corpus - (1.0 - alpha) * corpus_bleu(&to_source, cfg)),
        bleu: 100.0 * corpus,
        rouge1: per_sentence.iter().map(|s| s.rouge1).sum::<f64>() / n,
        rouge2: per_sentence.iter().map(|s| s.rouge2).sum::<f64>() / n,
    };
    Ok((row, per_sentence))
}

pub fn write_evaluation<W: Write>(mut w: W, rows: &[EvaluationRow]) -> Result<()> {
    writeln!(w, "{EVALUATION_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:.2},{:.2},{:.2},{:.2}", r.method, r.i_bleu, r.bleu, r.rouge1, r.rouge2)?;
    }
    Ok(())
}

pub fn write_sentence_scores<W: Write>(mut w: W, rows: &[SentenceScores]) -> Result<()> {
    writeln!(w, "{SENTENCE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:.2},{:.2},{:.2},{:.2}", r.line, r.i_bleu, r.bleu, r.rouge1, r.rouge2)?;
    }
    Ok(())
}

/// One row per pair followed by a `mean` row.
pub fn write_scores<W: Write>(mut w: W, rows: &[RewardBreakdown]) -> Result<()> {
    writeln!(w, "{SCORE_HEADER}")?;
    let fields = |r: &RewardBreakdown| [r.raw_sim, r.raw_flu, r.raw_div, r.gated_sim, r.gated_flu, r.gated_div, r.total];
    let mut sums = [0.0; 7];
    for (k, r) in rows.iter().enumerate() {
        let f = fields(r);
        write!(w, "{}", k + 1)?;
        for (s, v) in sums.iter_mut().zip(f) {
            *s += v;
            write!(w, ",{v:.6}")?;
        }
        writeln!(w)?;
    }
    write!(w, "mean")?;
    let n = rows.len().max(1) as f64;
    for s in sums {
        write!(w, ",{:.6}", s / n)?;
    }
    writeln!(w)?;
    Ok(())
}
