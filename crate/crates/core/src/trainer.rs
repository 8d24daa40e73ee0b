//! Progressive policy training: the policy first imitates VAE samples, then
//! takes over token decisions one position per epoch while being optimised
//! with REINFORCE against the paraphrase reward.

use std::fmt;
use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{clip_by_global_norm, sigmoid, Adam, Gradients, Graph, ParamSet, Tensor, Var};
use crate::decoding::{argmax, greedy_decode, sample_index};
use crate::error::{Error, Result};
use crate::nn::{ModelDims, Seq2Seq, Seq2SeqLayout};
use crate::reward::{RewardBreakdown, RewardFunction};
use crate::text::{decode_ids, EncodedSequence, TokenId, TokenSequence, Vocabulary, EOS, MAX_LEN, PAD, SOS};
use crate::vae::{SampleMode, Vae};

/// Probability of feeding the VAE token rather than the policy's own
/// previous action: `sigmoid(m - i - epoch / slowdown)`.
pub fn delta_prob(m: usize, i: usize, epoch: usize, slowdown: f64) -> f64 {
    sigmoid(m as f64 - i as f64 - epoch as f64 / slowdown)
}

/// Exploration probability `kappa^epoch`.
pub fn epsilon_prob(epoch: usize, kappa: f64) -> f64 {
    kappa.powi(epoch.min(i32::MAX as usize) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Transition,
    Drl,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Transition => "transition",
            Phase::Drl => "drl",
        })
    }
}

/// Schedule state for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    /// Epochs since the end of pre-training.
    pub epoch: usize,
    pub pretrain: bool,
    /// When false, actions never come from the VAE sample and inputs are
    /// always the policy's own actions.
    pub transition: bool,
    pub slowdown: f64,
    pub kappa: f64,
}

impl Schedule {
    pub fn delta(&self, m: usize, i: usize) -> f64 {
        if self.transition {
            delta_prob(m, i, self.epoch, self.slowdown)
        } else {
            0.0
        }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_prob(self.epoch, self.kappa)
    }

    /// Whether step `i` (1-based) copies the VAE token for a sample of `m`
    /// tokens including `<eos>`.
    pub fn forced(&self, m: usize, i: usize) -> bool {
        self.pretrain || (self.transition && i + self.epoch <= m)
    }
}

/// One taped rollout.
#[derive(Clone, Debug)]
pub struct TapeRollout {
    /// Chosen tokens, ending in `<eos>` unless the length cap was hit.
    pub actions: Vec<TokenId>,
    /// Sum of the chosen actions' log-probabilities.
    pub log_prob: Var,
    /// Actions copied from the VAE sample.
    pub from_sample: usize,
}

fn policy_mask(vocab: usize) -> Tensor {
    let mut m = vec![0.0; vocab];
    m[PAD as usize] = f64::NEG_INFINITY;
    m[SOS as usize] = f64::NEG_INFINITY;
    Tensor::vector(m)
}

/// Generates one action sequence for `source` on the tape.
///
/// `sample` is the VAE sample including its final `<eos>`.
pub fn rollout<R: Rng>(
    g: &mut Graph,
    layout: &Seq2SeqLayout,
    source: &EncodedSequence,
    sample: &[TokenId],
    sched: &Schedule,
    max_len: usize,
    rng: &mut R,
) -> Result<TapeRollout> {
    let m = sample.len();
    if m == 0 || sample[m - 1] != EOS {
        return Err(Error::Invalid("VAE sample must end with <eos>".into()));
    }
    let mask = g.input(policy_mask(layout.dims.vocab));
    let mut state = layout.encode(g, source.ids())?;
    let mut actions: Vec<TokenId> = Vec::with_capacity(m);
    let mut terms = Vec::with_capacity(m);
    let mut from_sample = 0;
    let eps = sched.epsilon();
    let mut i = 1;
    loop {
        let input = if i == 1 {
            SOS
        } else if !sched.pretrain && i - 1 <= m && rng.random::<f64>() < sched.delta(m, i) {
            sample[i - 2]
        } else {
            actions[i - 2]
        };
        let (next, raw) = layout.decode_step(g, &state, input)?;
        let logits = g.add(raw, mask)?;
        let action = if sched.forced(m, i) && i <= m {
            from_sample += 1;
            sample[i - 1] as usize
        } else {
            let lp = crate::autodiff::log_softmax(g.value(logits));
            if rng.random::<f64>() < eps {
                sample_index(&lp, 1.0, rng)
            } else {
                argmax(&lp)
            }
        };
        terms.push(g.cross_entropy(logits, action)?);
        actions.push(action as TokenId);
        state = next;
        if action as TokenId == EOS || actions.len() >= max_len {
            break;
        }
        i += 1;
    }
    let nll = g.sum_n(&terms)?;
    let log_prob = g.scale(nll, -1.0);
    Ok(TapeRollout {
        actions,
        log_prob,
        from_sample,
    })
}

/// Adds `-(advantage * weight) * d log_prob` to `grads`: descending on the
/// result ascends `advantage * log_prob`.
pub fn accumulate_policy_gradient(g: &Graph, log_prob: Var, advantage: f64, weight: f64, grads: &mut Gradients) -> Result<()> {
    if advantage == 0.0 {
        return Ok(());
    }
    g.backward_with_seed(log_prob, -advantage * weight, grads)
}

/// Clips and applies one Adam step. Returns the pre-clip gradient norm.
pub fn apply_update(params: &mut ParamSet, adam: &mut Adam, grads: &mut Gradients, lr: f64, clip: f64) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm {}", grads.global_norm())));
    }
    let norm = clip_by_global_norm(grads, clip);
    adam.step(params, grads, lr);
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub main_epochs: usize,
    pub lr_pretrain: f64,
    pub lr_transition: f64,
    pub lr_drl: f64,
    /// The DRL phase (smallest learning rate, VAE-reward baseline) starts
    /// once exploration probability falls below this value.
    pub drl_epsilon_threshold: f64,
    pub batch_size: usize,
    pub clip: f64,
    pub slowdown: f64,
    pub kappa: f64,
    pub max_len: usize,
    pub vae_sample_mode: SampleMode,
    pub no_pretrain: bool,
    pub no_transition: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 15,
            main_epochs: 2000,
            lr_pretrain: 0.15,
            lr_transition: 1e-3,
            lr_drl: 1e-4,
            drl_epsilon_threshold: 0.5,
            batch_size: 32,
            clip: 2.0,
            slowdown: 8.0,
            kappa: 0.9995,
            max_len: MAX_LEN,
            vae_sample_mode: SampleMode::Stochastic,
            no_pretrain: false,
            no_transition: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_transition", self.lr_transition),
            ("lr_drl", self.lr_drl),
            ("clip", self.clip),
            ("slowdown", self.slowdown),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Config(format!("kappa must be in (0, 1], got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.drl_epsilon_threshold) {
            return Err(Error::Config("drl_epsilon_threshold must be in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::Config("batch size and max length must be positive".into()));
        }
        Ok(())
    }

    fn phase(&self, sched: &Schedule) -> Phase {
        if sched.pretrain {
            Phase::Pretrain
        } else if sched.epsilon() < self.drl_epsilon_threshold {
            Phase::Drl
        } else {
            Phase::Transition
        }
    }

    fn lr(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Pretrain => self.lr_pretrain,
            Phase::Transition => self.lr_transition,
            Phase::Drl => self.lr_drl,
        }
    }
}

/// One line of the reward curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean validation reward of greedy policy outputs.
    pub mean_reward: f64,
    pub mean_sim: f64,
    pub mean_flu: f64,
    pub mean_div: f64,
    pub epsilon: f64,
    /// Mean over training rollouts of the first-step feeding probability.
    pub delta_at_first_token: f64,
    /// Mean training rollout reward (not part of the CSV).
    pub train_reward: f64,
    /// Fraction of training actions copied from VAE samples.
    pub forced_fraction: f64,
}

pub const CURVE_HEADER: &str = "epoch,phase,mean_reward,mean_sim,mean_flu,mean_div,epsilon,delta_at_first_token";

pub fn write_curve<W: Write>(mut w: W, rows: &[CurveRow]) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.phase, r.mean_reward, r.mean_sim, r.mean_flu, r.mean_div, r.epsilon, r.delta_at_first_token
        )?;
    }
    Ok(())
}

/// Mean reward with raw component means.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardSummary {
    pub reward: f64,
    pub sim: f64,
    pub flu: f64,
    pub div: f64,
}

impl RewardSummary {
    pub fn from_breakdowns(rs: &[RewardBreakdown]) -> Self {
        if rs.is_empty() {
            return Self::default();
        }
        let n = rs.len() as f64;
        RewardSummary {
            reward: rs.iter().map(|r| r.total).sum::<f64>() / n,
            sim: rs.iter().map(|r| r.raw_sim).sum::<f64>() / n,
            flu: rs.iter().map(|r| r.raw_flu).sum::<f64>() / n,
            div: rs.iter().map(|r| r.raw_div).sum::<f64>() / n,
        }
    }
}

/// Inputs shared by training and evaluation.
pub struct TrainingData<'a> {
    pub train: &'a [EncodedSequence],
    pub valid: &'a [EncodedSequence],
    pub vocab: &'a Vocabulary,
    pub reward: &'a RewardFunction,
}

fn tokens_of(vocab: &Vocabulary, ids: &[TokenId]) -> Result<TokenSequence> {
    decode_ids(vocab, ids)
}

/// Rewards of greedy policy outputs on `inputs`.
pub fn evaluate_policy(policy: &Seq2Seq, inputs: &[EncodedSequence], vocab: &Vocabulary, reward: &RewardFunction, max_len: usize) -> Result<Vec<RewardBreakdown>> {
    inputs
        .iter()
        .map(|x| {
            let hyp = greedy_decode(policy, policy.start(x)?, max_len)?;
            Ok(reward.score(&tokens_of(vocab, x.ids())?, &tokens_of(vocab, hyp.interior())?))
        })
        .collect()
}

/// Rewards of VAE samples on `inputs`.
pub fn evaluate_vae<R: Rng>(
    vae: &Vae,
    inputs: &[EncodedSequence],
    vocab: &Vocabulary,
    reward: &RewardFunction,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<RewardBreakdown>> {
    inputs
        .iter()
        .map(|x| {
            let hyp = vae.sample(x, mode, rng)?;
            Ok(reward.score(&tokens_of(vocab, x.ids())?, &tokens_of(vocab, hyp.interior())?))
        })
        .collect()
}

pub struct TrainOutcome {
    pub policy: Seq2Seq,
    pub best: Seq2Seq,
    pub best_reward: f64,
    pub best_epoch: usize,
    pub curve: Vec<CurveRow>,
}

/// Runs pre-training, then the progressive transition and DRL phases.
///
/// `on_epoch` sees every curve row together with the current policy.
pub fn train_pup(
    data: &TrainingData,
    vae: &Vae,
    dims: ModelDims,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CurveRow, &Seq2Seq) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if vae.vocab_hash != data.vocab.hash() {
        return Err(Error::VocabMismatch {
            expected: data.vocab.hash(),
            found: vae.vocab_hash,
        });
    }
    if dims.vocab != data.vocab.len() || vae.dims().vocab != data.vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary {} / VAE vocabulary {} differ from vocabulary size {}",
            dims.vocab,
            vae.dims().vocab,
            data.vocab.len()
        )));
    }
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut policy = Seq2Seq::new(dims, data.vocab.hash(), &mut init_rng)?;
    let mut adam = Adam::new(&policy.params);
    let sources: Vec<TokenSequence> = data
        .train
        .iter()
        .map(|x| tokens_of(data.vocab, x.ids()))
        .collect::<Result<_>>()?;

    let pretrain_epochs = if cfg.no_pretrain { 0 } else { cfg.pretrain_epochs };
    let mut curve = Vec::with_capacity(pretrain_epochs + cfg.main_epochs);
    let mut best = policy.clone();
    let mut best_reward = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..pretrain_epochs + cfg.main_epochs {
        let pretrain = epoch < pretrain_epochs;
        let sched = Schedule {
            epoch: epoch.saturating_sub(pretrain_epochs),
            pretrain,
            transition: !cfg.no_transition,
            slowdown: cfg.slowdown,
            kappa: cfg.kappa,
        };
        let phase = cfg.phase(&sched);
        let lr = cfg.lr(phase);
        order.shuffle(&mut rng);

        let (mut reward_sum, mut delta_sum, mut forced, mut actions_total) = (0.0, 0.0, 0usize, 0usize);
        let mut aborted = false;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = policy.params.zero_grads();
            let mut any = false;
            for &idx in batch {
                let x = &data.train[idx];
                let s = vae.sample(x, cfg.vae_sample_mode, &mut rng)?;
                let mut sample = s.interior().to_vec();
                sample.push(EOS);
                let mut g = Graph::new(&policy.params);
                let ro = rollout(&mut g, &policy.layout, x, &sample, &sched, cfg.max_len, &mut rng)?;
                let out = match ro.actions.last() {
                    Some(&EOS) => &ro.actions[..ro.actions.len() - 1],
                    _ => &ro.actions[..],
                };
                let r = data.reward.score(&sources[idx], &tokens_of(data.vocab, out)?).total;
                let advantage = if phase == Phase::Drl {
                    r - data.reward.score(&sources[idx], &tokens_of(data.vocab, s.interior())?).total
                } else {
                    r
                };
                if advantage != 0.0 {
                    any = true;
                    accumulate_policy_gradient(&g, ro.log_prob, advantage, 1.0 / batch.len() as f64, &mut grads)?;
                }
                reward_sum += r;
                delta_sum += sched.delta(sample.len(), 1);
                forced += ro.from_sample;
                actions_total += ro.actions.len();
            }
            if !any {
                continue;
            }
            if let Err(e) = apply_update(&mut policy.params, &mut adam, &mut grads, lr, cfg.clip) {
                warn!("epoch {epoch}: {e}; skipping the rest of the epoch");
                aborted = true;
                break;
            }
        }
        let n = data.train.len() as f64;
        let val = RewardSummary::from_breakdowns(&evaluate_policy(&policy, data.valid, data.vocab, data.reward, cfg.max_len)?);
        let row = CurveRow {
            epoch,
            phase,
            mean_reward: val.reward,
            mean_sim: val.sim,
            mean_flu: val.flu,
            mean_div: val.div,
            epsilon: if pretrain { 1.0 } else { sched.epsilon() },
            delta_at_first_token: delta_sum / n,
            train_reward: reward_sum / n,
            forced_fraction: if actions_total == 0 { 0.0 } else { forced as f64 / actions_total as f64 },
        };
        info!(
            "epoch {epoch} [{phase}{}]: valid reward {:.4} train reward {:.4} forced {:.3}",
            if aborted { ", aborted" } else { "" },
            row.mean_reward,
            row.train_reward,
            row.forced_fraction
        );
        if row.mean_reward > best_reward {
            best_reward = row.mean_reward;
            best_epoch = epoch;
            best = policy.clone();
        }
        on_epoch(&row, &policy)?;
        curve.push(row);
    }
    if curve.is_empty() {
        best_reward = RewardSummary::from_breakdowns(&evaluate_policy(&policy, data.valid, data.vocab, data.reward, cfg.max_len)?).reward;
    }
    Ok(TrainOutcome {
        policy,
        best,
        best_reward,
        best_epoch,
        curve,
    })
}
