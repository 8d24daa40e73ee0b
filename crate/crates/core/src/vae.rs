//! LSTM variational autoencoder used as the unsupervised warm-start model.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{clip_by_global_norm, dot, Adam, Graph, ParamId, ParamSet, Tensor, Var};
use crate::decoding::{greedy_decode, sample_decode, Hypothesis, StepModel};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Header};
use crate::nn::{ModelDims, ModelKind, PlainState, Seq2SeqLayout, TapeState, INIT_SCALE};
use crate::text::{EncodedSequence, TokenId, MAX_LEN, SOS, UNK};

/// `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// `mu + exp(0.5 * logvar) * noise`
pub fn reparameterize(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Decode from the posterior mean.
    Greedy,
    /// Decode from a latent drawn from the posterior.
    Stochastic,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SampleMode::Greedy),
            "stochastic" => Ok(SampleMode::Stochastic),
            _ => Err(Error::Config(format!("unknown sample mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeConfig {
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    /// Epochs over which the KL weight rises linearly from 0 to 1.
    pub kl_anneal_epochs: f64,
    /// Probability of replacing a decoder input with `<unk>`.
    pub word_dropout: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent: 64,
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            clip: 2.0,
            kl_anneal_epochs: 2.0,
            word_dropout: 0.25,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.batch_size == 0 {
            return Err(Error::Config("latent size and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.clip > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(Error::Config("word dropout must be in [0, 1)".into()));
        }
        if !(self.kl_anneal_epochs >= 0.0) {
            return Err(Error::Config("KL anneal length must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Tape nodes of one ELBO evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub params: ParamSet,
    pub layout: Seq2SeqLayout,
    pub latent: usize,
    pub vocab_hash: u64,
    mu_w: ParamId,
    mu_b: ParamId,
    logvar_w: ParamId,
    logvar_b: ParamId,
    state_w: ParamId,
    state_b: ParamId,
}

/// Parameters beyond the encoder-decoder for the given sizes.
fn latent_size(dims: &ModelDims, latent: usize) -> Option<u64> {
    let (h, l, z) = (dims.hidden as u64, dims.layers as u64, latent as u64);
    let proj = z.checked_mul(h)?.checked_add(z)?.checked_mul(2)?;
    let state = (2 * l * h).checked_mul(z)?.checked_add(2 * l * h)?;
    proj.checked_add(state)
}

impl Vae {
    fn skeleton(dims: ModelDims, latent: usize, vocab_hash: u64) -> Self {
        let mut params = ParamSet::new();
        let layout = Seq2SeqLayout::register(&mut params, dims);
        let h = dims.hidden;
        let s = 2 * dims.layers * h;
        let mu_w = params.add("mu.w", Tensor::zeros(&[latent, h]));
        let mu_b = params.add("mu.b", Tensor::zeros(&[latent]));
        let logvar_w = params.add("logvar.w", Tensor::zeros(&[latent, h]));
        let logvar_b = params.add("logvar.b", Tensor::zeros(&[latent]));
        let state_w = params.add("latent_state.w", Tensor::zeros(&[s, latent]));
        let state_b = params.add("latent_state.b", Tensor::zeros(&[s]));
        Vae {
            params,
            layout,
            latent,
            vocab_hash,
            mu_w,
            mu_b,
            logvar_w,
            logvar_b,
            state_w,
            state_b,
        }
    }

    pub fn new<R: Rng>(dims: ModelDims, latent: usize, vocab_hash: u64, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        if latent == 0 {
            return Err(Error::Config("latent size must be positive".into()));
        }
        let mut vae = Self::skeleton(dims, latent, vocab_hash);
        vae.params.init_uniform(INIT_SCALE, rng);
        Ok(vae)
    }

    pub fn dims(&self) -> ModelDims {
        self.layout.dims
    }

    /// Posterior mean and log-variance on the tape.
    pub fn encode_tape(&self, g: &mut Graph, input: &EncodedSequence) -> Result<(Var, Var)> {
        let st = self.layout.encode(g, input.ids())?;
        let top = *st.h.last().expect("at least one layer");
        let (w, b) = (g.param(self.mu_w), g.param(self.mu_b));
        let mu = g.linear(w, top, b)?;
        let (w, b) = (g.param(self.logvar_w), g.param(self.logvar_b));
        let logvar = g.linear(w, top, b)?;
        Ok((mu, logvar))
    }

    /// Posterior mean and log-variance.
    pub fn encode(&self, input: &EncodedSequence) -> Result<(Vec<f64>, Vec<f64>)> {
        let st = self.layout.encode_plain(&self.params, input.ids())?;
        let top = st.h.last().expect("at least one layer");
        let h = self.dims().hidden;
        let proj = |w: ParamId, b: ParamId| -> Vec<f64> {
            let (w, b) = (self.params.get(w).data(), self.params.get(b).data());
            (0..self.latent).map(|r| dot(&w[r * h..(r + 1) * h], top) + b[r]).collect()
        };
        Ok((proj(self.mu_w, self.mu_b), proj(self.logvar_w, self.logvar_b)))
    }

    pub fn reparameterize_tape(&self, g: &mut Graph, mu: Var, logvar: Var, noise: &[f64]) -> Result<Var> {
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let n = g.input(Tensor::vector(noise.to_vec()));
        let spread = g.mul(std, n)?;
        g.add(mu, spread)
    }

    pub fn kl_tape(&self, g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
        let mu2 = g.mul(mu, mu)?;
        let var = g.exp(logvar);
        let a = g.add(mu2, var)?;
        let b = g.sub(a, logvar)?;
        let c = g.offset(b, -1.0);
        let s = g.sum(c);
        Ok(g.scale(s, 0.5))
    }

    /// Decoder start state from a latent code on the tape.
    pub fn start_tape(&self, g: &mut Graph, z: Var) -> Result<TapeState> {
        let (w, b) = (g.param(self.state_w), g.param(self.state_b));
        let s = g.linear(w, z, b)?;
        let hd = self.dims().hidden;
        let mut st = TapeState {
            h: Vec::new(),
            c: Vec::new(),
        };
        for l in 0..self.dims().layers {
            let hraw = g.slice(s, 2 * l * hd, hd)?;
            st.h.push(g.tanh(hraw));
            st.c.push(g.slice(s, 2 * l * hd + hd, hd)?);
        }
        Ok(st)
    }

    /// Decoder start state from a latent code.
    pub fn start(&self, z: &[f64]) -> Result<PlainState> {
        if z.len() != self.latent {
            return Err(Error::Shape {
                op: "vae_start",
                lhs: vec![self.latent],
                rhs: vec![z.len()],
            });
        }
        let w = self.params.get(self.state_w).data();
        let b = self.params.get(self.state_b).data();
        let hd = self.dims().hidden;
        let s: Vec<f64> = (0..b.len())
            .map(|r| dot(&w[r * self.latent..(r + 1) * self.latent], z) + b[r])
            .collect();
        let mut st = PlainState { h: Vec::new(), c: Vec::new() };
        for l in 0..self.dims().layers {
            st.h.push(s[2 * l * hd..2 * l * hd + hd].iter().map(|v| v.tanh()).collect());
            st.c.push(s[2 * l * hd + hd..2 * (l + 1) * hd].to_vec());
        }
        Ok(st)
    }

    /// Negative ELBO of `input` with the given latent noise and decoder
    /// inputs (normally `<sos>` followed by the input with word dropout).
    pub fn elbo(
        &self,
        g: &mut Graph,
        input: &EncodedSequence,
        noise: &[f64],
        decoder_inputs: &[TokenId],
        kl_weight: f64,
    ) -> Result<ElboTerms> {
        let (mu, logvar) = self.encode_tape(g, input)?;
        let z = self.reparameterize_tape(g, mu, logvar, noise)?;
        let init = self.start_tape(g, z)?;
        let recon = self
            .layout
            .teacher_forced_loss(g, init, decoder_inputs, &input.ids()[1..])?;
        let kl = self.kl_tape(g, mu, logvar)?;
        let wkl = g.scale(kl, kl_weight);
        let total = g.add(recon, wkl)?;
        Ok(ElboTerms { total, recon, kl })
    }

    /// Generates a sentence for `input` of at most [`MAX_LEN`] tokens. Greedy
    /// mode decodes the posterior mean by argmax; stochastic mode draws the
    /// code from the posterior and then samples every token.
    pub fn sample<R: Rng>(&self, input: &EncodedSequence, mode: SampleMode, rng: &mut R) -> Result<Hypothesis> {
        let (mu, logvar) = self.encode(input)?;
        match mode {
            SampleMode::Greedy => greedy_decode(self, self.start(&mu)?, MAX_LEN),
            SampleMode::Stochastic => {
                let noise: Vec<f64> = (0..self.latent).map(|_| rng.sample(StandardNormal)).collect();
                let z = reparameterize(&mu, &logvar, &noise);
                sample_decode(self, self.start(&z)?, MAX_LEN, 1.0, rng)
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: ModelKind::Vae,
            dims: self.dims(),
            latent: self.latent,
            vocab_hash: self.vocab_hash,
        };
        checkpoint::write(&header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8], expected_hash: Option<u64>) -> Result<Self> {
        let (header, r) = checkpoint::read_header(bytes, expected_hash)?;
        if header.kind != ModelKind::Vae {
            return Err(Error::Checkpoint("expected a VAE checkpoint, found a seq2seq model".into()));
        }
        let size = header
            .dims
            .seq2seq_size()
            .and_then(|s| s.checked_add(latent_size(&header.dims, header.latent)?));
        checkpoint::check_capacity(&r, size)?;
        let mut vae = Self::skeleton(header.dims, header.latent, header.vocab_hash);
        checkpoint::read_params(r, &mut vae.params)?;
        Ok(vae)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path, expected_hash: Option<u64>) -> Result<Self> {
        Self::from_bytes(&checkpoint::load_bytes(path)?, expected_hash)
    }
}

impl StepModel for Vae {
    type State = PlainState;

    fn vocab_size(&self) -> usize {
        self.dims().vocab
    }

    fn step(&self, state: &PlainState, input: TokenId) -> Result<(PlainState, Vec<f64>)> {
        self.layout.decode_step_plain(&self.params, state, input)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeEpochStats {
    pub epoch: usize,
    /// Mean per-sentence reconstruction loss plus KL, unweighted.
    pub elbo_loss: f64,
    pub recon_per_token: f64,
    pub kl: f64,
    pub kl_weight: f64,
}

/// Trains a VAE on `corpus`; returns the model and one record per epoch.
pub fn train_vae(
    corpus: &[EncodedSequence],
    dims: ModelDims,
    vocab_hash: u64,
    cfg: &VaeConfig,
) -> Result<(Vae, Vec<VaeEpochStats>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Invalid("VAE training corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vae = Vae::new(dims, cfg.latent, vocab_hash, &mut rng)?;
    let mut adam = Adam::new(&vae.params);
    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let anneal_steps = cfg.kl_anneal_epochs * batches_per_epoch as f64;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut recon_sum, mut kl_sum, mut tokens) = (0.0, 0.0, 0.0, 0usize);
        let mut kl_weight = 1.0;
        for batch in order.chunks(cfg.batch_size) {
            kl_weight = if anneal_steps > 0.0 {
                (step as f64 / anneal_steps).min(1.0)
            } else {
                1.0
            };
            let mut grads = vae.params.zero_grads();
            for &idx in batch {
                let x = &corpus[idx];
                let noise: Vec<f64> = (0..cfg.latent).map(|_| rng.sample(StandardNormal)).collect();
                let mut inputs = Vec::with_capacity(x.ids().len() - 1);
                inputs.push(SOS);
                for &t in &x.ids()[1..x.ids().len() - 1] {
                    inputs.push(if rng.random::<f64>() < cfg.word_dropout { UNK } else { t });
                }
                let mut g = Graph::new(&vae.params);
                let terms = vae.elbo(&mut g, x, &noise, &inputs, kl_weight)?;
                g.backward_with_seed(terms.total, 1.0 / batch.len() as f64, &mut grads)?;
                let (r, k) = (g.scalar(terms.recon), g.scalar(terms.kl));
                recon_sum += r;
                kl_sum += k;
                loss_sum += r + k;
                tokens += x.ids().len() - 1;
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite(format!("VAE epoch {epoch}, step {step}")));
            }
            clip_by_global_norm(&mut grads, cfg.clip);
            adam.step(&mut vae.params, &grads, cfg.lr);
            step += 1;
        }
        let n = corpus.len() as f64;
        let stats = VaeEpochStats {
            epoch,
            elbo_loss: loss_sum / n,
            recon_per_token: recon_sum / tokens as f64,
            kl: kl_sum / n,
            kl_weight,
        };
        info!(
            "vae epoch {epoch}: loss {:.4} recon/token {:.4} kl {:.4}",
            stats.elbo_loss, stats.recon_per_token, stats.kl
        );
        history.push(stats);
    }
    Ok((vae, history))
}
