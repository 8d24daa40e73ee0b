//! Greedy, sampled and beam-search generation over any step-wise model.

use std::cmp::Ordering;

use rand::Rng;

use crate::autodiff::log_softmax;
use crate::error::{Error, Result};
use crate::text::{TokenId, EOS, MAX_LEN, PAD, SOS};

/// Temperatures below this decode greedily.
pub const MIN_TEMPERATURE: f64 = 1e-4;

/// A conditional next-token model driven one input token at a time.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Consumes `input` and returns the new state with next-token logits.
    fn step(&self, state: &Self::State, input: TokenId) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Sample,
    Beam,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "sample" => Ok(Strategy::Sample),
            "beam" => Ok(Strategy::Beam),
            _ => Err(Error::Config(format!("unknown decoding strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub temperature: f64,
    pub max_len: usize,
    /// Exponent of the length divisor used to rank beam hypotheses; 0 ranks
    /// by raw log-probability.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_width: 8,
            temperature: 1.0,
            max_len: MAX_LEN,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max length must be at least 1".into()));
        }
        if !(self.length_penalty >= 0.0) {
            return Err(Error::Config("length penalty must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, including the final `<eos>` when finished.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated ids without the terminating `<eos>`.
    pub fn interior(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// Length-normalised log-probability.
    pub fn score(&self, length_penalty: f64) -> f64 {
        let len = self.tokens.len().max(1) as f64;
        self.log_prob / len.powf(length_penalty)
    }
}

/// Log-probabilities over the vocabulary with `<pad>` and `<sos>` excluded.
pub fn next_log_probs(logits: &[f64]) -> Vec<f64> {
    let mut masked = logits.to_vec();
    for special in [PAD, SOS] {
        if let Some(v) = masked.get_mut(special as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
    log_softmax(&masked)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from `log_probs / temperature` by inverse CDF.
pub fn sample_index<R: Rng>(log_probs: &[f64], temperature: f64, rng: &mut R) -> usize {
    let scaled: Vec<f64> = log_probs.iter().map(|lp| lp / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

fn run<M: StepModel>(
    model: &M,
    init: M::State,
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<Hypothesis> {
    let mut state = init;
    let mut input = SOS;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let (next, logits) = model.step(&state, input)?;
        let lp = next_log_probs(&logits);
        let tok = choose(&lp);
        hyp.log_prob += lp[tok];
        hyp.tokens.push(tok as TokenId);
        if tok as TokenId == EOS {
            hyp.finished = true;
            break;
        }
        state = next;
        input = tok as TokenId;
    }
    Ok(hyp)
}

/// Argmax decoding until `<eos>` or `max_len` interior tokens.
pub fn greedy_decode<M: StepModel>(model: &M, init: M::State, max_len: usize) -> Result<Hypothesis> {
    run(model, init, max_len, argmax)
}

/// Multinomial decoding from the temperature-scaled distribution. The
/// returned log-probability is under the unscaled model.
pub fn sample_decode<M: StepModel, R: Rng>(
    model: &M,
    init: M::State,
    max_len: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Hypothesis> {
    if temperature < MIN_TEMPERATURE {
        return greedy_decode(model, init, max_len);
    }
    run(model, init, max_len, |lp| sample_index(lp, temperature, rng))
}

struct Beam<S> {
    hyp: Hypothesis,
    state: S,
}

struct Candidate {
    beam: usize,
    token: usize,
    log_prob: f64,
    step_log_prob: f64,
}

/// Beam search. Returns every retired hypothesis, best first by
/// length-normalised log-probability.
pub fn beam_search<M: StepModel>(model: &M, init: M::State, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let mut active = vec![Beam {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: init,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    while !active.is_empty() {
        let mut cands = Vec::new();
        let mut states = Vec::with_capacity(active.len());
        for (bi, beam) in active.iter().enumerate() {
            let input = beam.hyp.tokens.last().copied().unwrap_or(SOS);
            let (next, logits) = model.step(&beam.state, input)?;
            let lp = next_log_probs(&logits);
            for (tok, &l) in lp.iter().enumerate() {
                if l > f64::NEG_INFINITY {
                    cands.push(Candidate {
                        beam: bi,
                        token: tok,
                        log_prob: beam.hyp.log_prob + l,
                        step_log_prob: l,
                    });
                }
            }
            states.push(next);
        }
        cands.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(Ordering::Equal)
                .then(b.step_log_prob.partial_cmp(&a.step_log_prob).unwrap_or(Ordering::Equal))
                .then(a.beam.cmp(&b.beam))
                .then(a.token.cmp(&b.token))
        });
        cands.truncate(cfg.beam_width);
        let mut next_active = Vec::with_capacity(cands.len());
        for c in cands {
            let mut hyp = active[c.beam].hyp.clone();
            hyp.tokens.push(c.token as TokenId);
            hyp.log_prob = c.log_prob;
            if c.token as TokenId == EOS {
                hyp.finished = true;
                done.push(hyp);
            } else if hyp.tokens.len() >= cfg.max_len {
                done.push(hyp);
            } else {
                next_active.push(Beam {
                    hyp,
                    state: states[c.beam].clone(),
                });
            }
        }
        active = next_active;
    }
    let alpha = cfg.length_penalty;
    done.sort_by(|a, b| {
        b.score(alpha)
            .partial_cmp(&a.score(alpha))
            .unwrap_or(Ordering::Equal)
            .then(b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal))
    });
    Ok(done)
}

/// Decodes with the strategy in `cfg`, returning the chosen hypothesis.
pub fn decode<M: StepModel, R: Rng>(model: &M, init: M::State, cfg: &DecodeConfig, rng: &mut R) -> Result<Hypothesis> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(model, init, cfg.max_len),
        Strategy::Sample => sample_decode(model, init, cfg.max_len, cfg.temperature, rng),
        Strategy::Beam => Ok(beam_search(model, init, cfg)?
            .into_iter()
            .next()
            .expect("beam search retires at least one hypothesis")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Fixed logits regardless of history.
    struct Uniform(usize);

    impl StepModel for Uniform {
        type State = ();
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn step(&self, _: &(), _: TokenId) -> Result<((), Vec<f64>)> {
            Ok(((), vec![0.0; self.0]))
        }
    }

    #[test]
    fn greedy_respects_cap_and_is_deterministic() {
        let m = Uniform(6);
        let a = greedy_decode(&m, (), 15).unwrap();
        // Ties go to the lowest id, which is <eos> after masking.
        assert_eq!(a.tokens, vec![EOS]);
        assert_eq!(greedy_decode(&m, (), 15).unwrap(), a);
    }

    #[test]
    fn tiny_temperature_is_greedy() {
        let m = Uniform(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_decode(&m, (), 15, 1e-6, &mut rng).unwrap(),
            greedy_decode(&m, (), 15).unwrap()
        );
    }

    #[test]
    fn sampling_is_seeded() {
        let m = Uniform(8);
        let a = sample_decode(&m, (), 15, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_decode(&m, (), 15, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= 15);
    }

    #[test]
    fn masked_specials_are_never_drawn() {
        let lp = next_log_probs(&[5.0, 5.0, 0.0, 0.0]);
        assert_eq!(lp[0], f64::NEG_INFINITY);
        assert_eq!(lp[1], f64::NEG_INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert!(sample_index(&lp, 1.0, &mut rng) >= 2);
        }
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig { beam_width: 0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig::default().validate().is_ok());
        assert_eq!("beam".parse::<Strategy>().unwrap(), Strategy::Beam);
        assert!("nucleus".parse::<Strategy>().is_err());
    }
}
