//! Gated paraphrase reward: weighted semantic similarity, fluency and
//! expression diversity, each zeroed outside its acceptance band.

use crate::embed::{semantic_similarity, sentence_vector, EmbeddingTable};
use crate::error::{Error, Result};
use crate::lm::NGramLM;
use crate::metrics::diversity_inverse_bleu;
use crate::text::{encode_with_len, TokenSequence, Vocabulary, MAX_LEN};

/// Semantic adequacy `r_Sim(X, Y)` in [0, 1].
pub trait SimilarityScorer {
    fn similarity(&self, source: &TokenSequence, candidate: &TokenSequence) -> f64;
}

/// Fluency `r_F(Y)` in [0, 1].
pub trait FluencyScorer {
    fn fluency(&self, candidate: &TokenSequence) -> f64;
}

impl<F> SimilarityScorer for F
where
    F: Fn(&TokenSequence, &TokenSequence) -> f64,
{
    fn similarity(&self, source: &TokenSequence, candidate: &TokenSequence) -> f64 {
        self(source, candidate)
    }
}

impl<F> FluencyScorer for F
where
    F: Fn(&TokenSequence) -> f64,
{
    fn fluency(&self, candidate: &TokenSequence) -> f64 {
        self(candidate)
    }
}

/// Cosine similarity of idf-weighted mean token vectors.
#[derive(Clone, Debug)]
pub struct EmbeddingSimilarity {
    pub table: EmbeddingTable,
}

impl SimilarityScorer for EmbeddingSimilarity {
    fn similarity(&self, source: &TokenSequence, candidate: &TokenSequence) -> f64 {
        semantic_similarity(
            &sentence_vector(&self.table, source),
            &sentence_vector(&self.table, candidate),
        )
    }
}

/// Per-token geometric-mean probability under a Kneser–Ney model.
#[derive(Clone, Debug)]
pub struct LmFluency {
    pub lm: NGramLM,
    pub vocab: Vocabulary,
}

impl LmFluency {
    pub fn new(lm: NGramLM, vocab: Vocabulary) -> Result<Self> {
        if lm.vocab_hash() != vocab.hash() {
            return Err(Error::VocabMismatch {
                expected: vocab.hash(),
                found: lm.vocab_hash(),
            });
        }
        Ok(LmFluency { lm, vocab })
    }
}

impl FluencyScorer for LmFluency {
    fn fluency(&self, candidate: &TokenSequence) -> f64 {
        let len = candidate.len().max(MAX_LEN);
        self.lm.fluency_score(&encode_with_len(&self.vocab, candidate, len))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 0.4,
            beta: 0.3,
            gamma: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardThresholds {
    pub tau_min: f64,
    pub tau_max: f64,
    pub lambda_min: f64,
}

impl Default for RewardThresholds {
    fn default() -> Self {
        RewardThresholds {
            tau_min: 0.3,
            tau_max: 0.98,
            lambda_min: 0.3,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

impl RewardThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_min && self.tau_min < self.tau_max && self.tau_max <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= tau_min < tau_max <= 1, got {} and {}",
                self.tau_min, self.tau_max
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_min) {
            return Err(Error::Config(format!("lambda_min must be in [0, 1], got {}", self.lambda_min)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardBreakdown {
    pub raw_sim: f64,
    pub raw_flu: f64,
    pub raw_div: f64,
    pub gated_sim: f64,
    pub gated_flu: f64,
    pub gated_div: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Applies the gates to raw component scores. Gate conditions read the
    /// raw (pre-gating) values; all bounds are inclusive.
    pub fn from_raw(
        raw_sim: f64,
        raw_flu: f64,
        raw_div: f64,
        weights: &RewardWeights,
        thresholds: &RewardThresholds,
    ) -> Self {
        let sim_ok = raw_sim >= thresholds.tau_min;
        let flu_ok = raw_flu >= thresholds.lambda_min;
        let gated_sim = if sim_ok && raw_sim <= thresholds.tau_max { raw_sim } else { 0.0 };
        let gated_flu = if flu_ok { raw_flu } else { 0.0 };
        let gated_div = if sim_ok && flu_ok { raw_div } else { 0.0 };
        RewardBreakdown {
            raw_sim,
            raw_flu,
            raw_div,
            gated_sim,
            gated_flu,
            gated_div,
            total: weights.alpha * gated_sim + weights.beta * gated_flu + weights.gamma * gated_div,
        }
    }
}

/// Scores `candidate` as a paraphrase of `source`. An empty candidate scores 0.
pub fn compute_reward(
    source: &TokenSequence,
    candidate: &TokenSequence,
    sim_scorer: &dyn SimilarityScorer,
    flu_scorer: &dyn FluencyScorer,
    weights: &RewardWeights,
    thresholds: &RewardThresholds,
) -> RewardBreakdown {
    if candidate.is_empty() {
        return RewardBreakdown::default();
    }
    let raw_sim = sim_scorer.similarity(source, candidate).clamp(0.0, 1.0);
    let raw_flu = flu_scorer.fluency(candidate).clamp(0.0, 1.0);
    let raw_div = diversity_inverse_bleu(source.tokens(), candidate.tokens());
    RewardBreakdown::from_raw(raw_sim, raw_flu, raw_div, weights, thresholds)
}

/// The reward with its scorers and constants bundled; shared read-only by
/// the trainer and the CLI.
pub struct RewardFunction {
    pub similarity: Box<dyn SimilarityScorer + Send + Sync>,
    pub fluency: Box<dyn FluencyScorer + Send + Sync>,
    pub weights: RewardWeights,
    pub thresholds: RewardThresholds,
}

impl RewardFunction {
    pub fn new(
        similarity: impl SimilarityScorer + Send + Sync + 'static,
        fluency: impl FluencyScorer + Send + Sync + 'static,
        weights: RewardWeights,
        thresholds: RewardThresholds,
    ) -> Self {
        RewardFunction {
            similarity: Box::new(similarity),
            fluency: Box::new(fluency),
            weights,
            thresholds,
        }
    }

    pub fn score(&self, source: &TokenSequence, candidate: &TokenSequence) -> RewardBreakdown {
        compute_reward(
            source,
            candidate,
            self.similarity.as_ref(),
            self.fluency.as_ref(),
            &self.weights,
            &self.thresholds,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn gate(sim: f64, flu: f64, div: f64) -> RewardBreakdown {
        RewardBreakdown::from_raw(sim, flu, div, &RewardWeights::default(), &RewardThresholds::default())
    }

    #[test]
    fn worked_examples() {
        assert!((gate(0.8, 0.9, 0.5).total - 0.74).abs() < 1e-12);

        let copy = gate(1.0, 0.9, 0.0);
        assert_eq!(copy.gated_sim, 0.0);
        assert!((copy.total - 0.27).abs() < 1e-12);

        let disfluent = gate(0.8, 0.25, 0.5);
        assert_eq!((disfluent.gated_flu, disfluent.gated_div), (0.0, 0.0));
        assert!((disfluent.total - 0.32).abs() < 1e-12);

        let unrelated = gate(0.2, 0.9, 0.5);
        assert_eq!((unrelated.gated_sim, unrelated.gated_div), (0.0, 0.0));
        assert!((unrelated.total - 0.27).abs() < 1e-12);
    }

    #[test]
    fn boundaries_are_inclusive() {
        assert_eq!(gate(0.3, 0.9, 0.5).gated_sim, 0.3);
        assert_eq!(gate(0.98, 0.9, 0.5).gated_sim, 0.98);
        let b = gate(0.8, 0.3, 0.5);
        assert_eq!((b.gated_flu, b.gated_div), (0.3, 0.5));
    }

    #[test]
    fn copy_is_penalised_end_to_end() {
        let x = tokenize("how can i work in microsoft");
        let one = |_: &TokenSequence, _: &TokenSequence| 1.0;
        let flu = |_: &TokenSequence| 0.9;
        let r = compute_reward(&x, &x, &one, &flu, &RewardWeights::default(), &RewardThresholds::default());
        assert_eq!(r.gated_sim, 0.0);
        assert_eq!(r.gated_div, 0.0);
        assert!(r.total <= 0.3 + 1e-12);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let one = |_: &TokenSequence, _: &TokenSequence| 1.0;
        let flu = |_: &TokenSequence| 1.0;
        let r = compute_reward(
            &tokenize("a b"),
            &TokenSequence::default(),
            &one,
            &flu,
            &RewardWeights::default(),
            &RewardThresholds::default(),
        );
        assert_eq!(r, RewardBreakdown::default());
    }

    #[test]
    fn validation() {
        assert!(RewardWeights { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(RewardThresholds { tau_min: 0.9, tau_max: 0.5, lambda_min: 0.3 }.validate().is_err());
        assert!(RewardThresholds::default().validate().is_ok());
    }
}
