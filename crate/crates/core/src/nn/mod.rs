//! LSTM layers and the encoder-decoder built from them.
//!
//! Every forward computation exists twice: once on a [`Graph`] for training
//! and once on plain slices for inference. Both use the same arithmetic in
//! the same order, so their values agree bitwise.

pub(crate) mod checkpoint;

use rand::Rng;

pub use checkpoint::{ModelKind, NN_MAGIC};

use crate::autodiff::{dot, sigmoid, Graph, ParamId, ParamSet, Tensor, Var};
use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::text::{EncodedSequence, TokenId};

/// Uniform initialisation half-width.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 || self.embed == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }

    /// Number of scalar parameters of the encoder-decoder.
    pub(crate) fn seq2seq_size(&self) -> Option<u64> {
        let (v, e, h, l) = (
            self.vocab as u64,
            self.embed as u64,
            self.hidden as u64,
            self.layers as u64,
        );
        let first = (4 * h).checked_mul(e.checked_add(h)?)?.checked_add(4 * h)?;
        let rest = (4 * h).checked_mul(2 * h)?.checked_add(4 * h)?;
        let stack = first.checked_add(rest.checked_mul(l - 1)?)?;
        v.checked_mul(e)?
            .checked_add(stack.checked_mul(2)?)?
            .checked_add(v.checked_mul(h)?.checked_add(v)?)
    }
}

/// One LSTM layer. `w` is `[4H, I + H]` with gate blocks ordered
/// input, forget, candidate, output; `b` is `[4H]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn register(params: &mut ParamSet, name: &str, input: usize, hidden: usize) -> Self {
        let w = params.add(format!("{name}.w"), Tensor::zeros(&[4 * hidden, input + hidden]));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[4 * hidden]));
        LstmLayer { w, b, input, hidden }
    }

    fn check(&self, x: usize, h: usize, c: usize) -> Result<()> {
        if x != self.input || h != self.hidden || c != self.hidden {
            return Err(Error::Shape {
                op: "lstm_step",
                lhs: vec![self.input, self.hidden],
                rhs: vec![x, h, c],
            });
        }
        Ok(())
    }

    /// Taped step: returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        self.check(g.value(x).len(), g.value(h).len(), g.value(c).len())?;
        let hd = self.hidden;
        let xh = g.concat(&[x, h])?;
        let w = g.param(self.w);
        let b = g.param(self.b);
        let z = g.linear(w, xh, b)?;
        let zi = g.slice(z, 0, hd)?;
        let zf = g.slice(z, hd, hd)?;
        let zg = g.slice(z, 2 * hd, hd)?;
        let zo = g.slice(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c2 = g.add(keep, write)?;
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Untaped step with the same arithmetic as [`LstmLayer::step`].
    pub fn step_plain(&self, params: &ParamSet, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(x.len(), h.len(), c.len())?;
        let hd = self.hidden;
        let cols = self.input + hd;
        let mut xh = Vec::with_capacity(cols);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let w = params.get(self.w).data();
        let b = params.get(self.b).data();
        let z: Vec<f64> = (0..4 * hd).map(|r| dot(&w[r * cols..(r + 1) * cols], &xh) + b[r]).collect();
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for k in 0..hd {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hd + k]);
            let cand = z[2 * hd + k].tanh();
            let o = sigmoid(z[3 * hd + k]);
            c2[k] = f * c[k] + i * cand;
            h2[k] = o * c2[k].tanh();
        }
        Ok((h2, c2))
    }
}

/// Per-layer recurrent state on a tape.
#[derive(Clone, Debug)]
pub struct TapeState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

/// Per-layer recurrent state as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl PlainState {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        PlainState {
            h: vec![vec![0.0; hidden]; layers],
            c: vec![vec![0.0; hidden]; layers],
        }
    }
}

/// Parameter handles of a shared-embedding LSTM encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqLayout {
    pub dims: ModelDims,
    pub embedding: ParamId,
    pub encoder: Vec<LstmLayer>,
    pub decoder: Vec<LstmLayer>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

fn stack(params: &mut ParamSet, prefix: &str, dims: &ModelDims) -> Vec<LstmLayer> {
    (0..dims.layers)
        .map(|l| {
            let input = if l == 0 { dims.embed } else { dims.hidden };
            LstmLayer::register(params, &format!("{prefix}.{l}"), input, dims.hidden)
        })
        .collect()
}

impl Seq2SeqLayout {
    /// Adds zero-valued parameters for `dims` to `params`.
    pub fn register(params: &mut ParamSet, dims: ModelDims) -> Self {
        let embedding = params.add("embedding", Tensor::zeros(&[dims.vocab, dims.embed]));
        let encoder = stack(params, "encoder", &dims);
        let decoder = stack(params, "decoder", &dims);
        let out_w = params.add("output.w", Tensor::zeros(&[dims.vocab, dims.hidden]));
        let out_b = params.add("output.b", Tensor::zeros(&[dims.vocab]));
        Seq2SeqLayout {
            dims,
            embedding,
            encoder,
            decoder,
            out_w,
            out_b,
        }
    }

    fn check_token(&self, t: TokenId) -> Result<usize> {
        if (t as usize) < self.dims.vocab {
            Ok(t as usize)
        } else {
            Err(Error::IdOutOfRange {
                id: t,
                size: self.dims.vocab,
            })
        }
    }

    fn run_layers(&self, g: &mut Graph, layers: &[LstmLayer], state: &TapeState, token: TokenId) -> Result<TapeState> {
        let mut x = g.row(self.embedding, self.check_token(token)?)?;
        let mut next = TapeState {
            h: Vec::with_capacity(layers.len()),
            c: Vec::with_capacity(layers.len()),
        };
        for (l, layer) in layers.iter().enumerate() {
            let (h, c) = layer.step(g, x, state.h[l], state.c[l])?;
            next.h.push(h);
            next.c.push(c);
            x = h;
        }
        Ok(next)
    }

    fn run_layers_plain(&self, params: &ParamSet, layers: &[LstmLayer], state: &PlainState, token: TokenId) -> Result<PlainState> {
        let row = self.check_token(token)?;
        let e = self.dims.embed;
        let mut x = params.get(self.embedding).data()[row * e..(row + 1) * e].to_vec();
        let mut next = PlainState {
            h: Vec::with_capacity(layers.len()),
            c: Vec::with_capacity(layers.len()),
        };
        for (l, layer) in layers.iter().enumerate() {
            let (h, c) = layer.step_plain(params, &x, &state.h[l], &state.c[l])?;
            x.clone_from(&h);
            next.h.push(h);
            next.c.push(c);
        }
        Ok(next)
    }

    pub fn zero_state(&self, g: &mut Graph) -> TapeState {
        let z = Tensor::vector(vec![0.0; self.dims.hidden]);
        let h = (0..self.dims.layers).map(|_| g.input(z.clone())).collect();
        let c = (0..self.dims.layers).map(|_| g.input(z.clone())).collect();
        TapeState { h, c }
    }

    /// Runs the encoder over `ids` from a zero state; returns the final
    /// state of every layer.
    pub fn encode(&self, g: &mut Graph, ids: &[TokenId]) -> Result<TapeState> {
        let mut state = self.zero_state(g);
        for &t in ids {
            state = self.run_layers(g, &self.encoder, &state, t)?;
        }
        Ok(state)
    }

    pub fn encode_plain(&self, params: &ParamSet, ids: &[TokenId]) -> Result<PlainState> {
        let mut state = PlainState::zeros(self.dims.layers, self.dims.hidden);
        for &t in ids {
            state = self.run_layers_plain(params, &self.encoder, &state, t)?;
        }
        Ok(state)
    }

    /// One decoder step: consumes `input`, returns the new state and the
    /// next-token logits.
    pub fn decode_step(&self, g: &mut Graph, state: &TapeState, input: TokenId) -> Result<(TapeState, Var)> {
        let next = self.run_layers(g, &self.decoder, state, input)?;
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let top = *next.h.last().expect("at least one layer");
        let logits = g.linear(w, top, b)?;
        Ok((next, logits))
    }

    pub fn decode_step_plain(&self, params: &ParamSet, state: &PlainState, input: TokenId) -> Result<(PlainState, Vec<f64>)> {
        let next = self.run_layers_plain(params, &self.decoder, state, input)?;
        let top = next.h.last().expect("at least one layer");
        let w = params.get(self.out_w).data();
        let b = params.get(self.out_b).data();
        let h = self.dims.hidden;
        let logits = (0..self.dims.vocab).map(|r| dot(&w[r * h..(r + 1) * h], top) + b[r]).collect();
        Ok((next, logits))
    }

    /// Summed cross-entropy of `target` (every token after `<sos>`) given
    /// the decoder starts from `init` and is fed the gold prefix.
    pub fn teacher_forced_loss(&self, g: &mut Graph, init: TapeState, inputs: &[TokenId], target: &[TokenId]) -> Result<Var> {
        if inputs.len() != target.len() {
            return Err(Error::Shape {
                op: "teacher_forced_loss",
                lhs: vec![inputs.len()],
                rhs: vec![target.len()],
            });
        }
        let mut state = init;
        let mut losses = Vec::with_capacity(target.len());
        for (&inp, &tgt) in inputs.iter().zip(target) {
            let (next, logits) = self.decode_step(g, &state, inp)?;
            losses.push(g.cross_entropy(logits, self.check_token(tgt)?)?);
            state = next;
        }
        g.sum_n(&losses)
    }

    /// Encodes `source`, then scores `target` under teacher forcing.
    pub fn loss(&self, g: &mut Graph, source: &EncodedSequence, target: &EncodedSequence) -> Result<Var> {
        let init = self.encode(g, source.ids())?;
        let ids = target.ids();
        self.teacher_forced_loss(g, init, &ids[..ids.len() - 1], &ids[1..])
    }
}

/// Shared-embedding two-stack LSTM encoder-decoder; the decoder starts from
/// the encoder's final state of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    pub params: ParamSet,
    pub layout: Seq2SeqLayout,
    pub vocab_hash: u64,
}

impl Seq2Seq {
    pub fn new<R: Rng>(dims: ModelDims, vocab_hash: u64, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        let layout = Seq2SeqLayout::register(&mut params, dims);
        params.init_uniform(INIT_SCALE, rng);
        Ok(Seq2Seq {
            params,
            layout,
            vocab_hash,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.layout.dims
    }

    /// Teacher-forced summed cross-entropy of `target` given `source`.
    pub fn loss(&self, g: &mut Graph, source: &EncodedSequence, target: &EncodedSequence) -> Result<Var> {
        self.layout.loss(g, source, target)
    }

    /// Decoder start state for `source`.
    pub fn start(&self, source: &EncodedSequence) -> Result<PlainState> {
        self.layout.encode_plain(&self.params, source.ids())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = checkpoint::Header {
            kind: ModelKind::Seq2Seq,
            dims: self.dims(),
            latent: 0,
            vocab_hash: self.vocab_hash,
        };
        checkpoint::write(&header, &self.params)
    }

    /// Parses a checkpoint, rejecting VAE files and, when given, a
    /// vocabulary hash other than `expected_hash`.
    pub fn from_bytes(bytes: &[u8], expected_hash: Option<u64>) -> Result<Self> {
        let (header, r) = checkpoint::read_header(bytes, expected_hash)?;
        if header.kind != ModelKind::Seq2Seq {
            return Err(Error::Checkpoint("expected a seq2seq checkpoint, found a VAE".into()));
        }
        checkpoint::check_capacity(&r, header.dims.seq2seq_size())?;
        let mut params = ParamSet::new();
        let layout = Seq2SeqLayout::register(&mut params, header.dims);
        checkpoint::read_params(r, &mut params)?;
        Ok(Seq2Seq {
            params,
            layout,
            vocab_hash: header.vocab_hash,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &std::path::Path, expected_hash: Option<u64>) -> Result<Self> {
        Self::from_bytes(&checkpoint::load_bytes(path)?, expected_hash)
    }
}

impl StepModel for Seq2Seq {
    type State = PlainState;

    fn vocab_size(&self) -> usize {
        self.layout.dims.vocab
    }

    fn step(&self, state: &PlainState, input: TokenId) -> Result<(PlainState, Vec<f64>)> {
        self.layout.decode_step_plain(&self.params, state, input)
    }
}
