//! Interpolated Kneser–Ney n-gram language model used as the fluency scorer.
//!
//! Counts follow the usual "adjusted count" convention: the highest order and
//! any n-gram starting with `sos` keep raw counts, every other lower-order
//! n-gram uses its continuation count (number of distinct left extensions).
//! A single absolute discount applies at every order, and the unigram level
//! interpolates with the uniform distribution over predictable tokens, so
//! every in-vocabulary word gets non-zero probability.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{EncodedSequence, TokenId, PAD, SOS};

pub const LM_MAGIC: &[u8; 6] = b"PUPLM1";

#[derive(Clone, Debug)]
pub struct NGramLM {
    order: usize,
    discount: f64,
    vocab_size: usize,
    vocab_hash: u64,
    /// Adjusted counts per order; index `n - 1` holds n-grams.
    counts: Vec<HashMap<Vec<TokenId>, u64>>,
    /// Per-context (sum of adjusted counts, number of distinct followers).
    contexts: Vec<HashMap<Vec<TokenId>, (u64, u64)>>,
}

impl NGramLM {
    /// Trains on encoded sentences (`sos ... eos`). `vocab_size` fixes the
    /// support of the distribution.
    pub fn train(
        corpus: &[EncodedSequence],
        vocab_size: usize,
        vocab_hash: u64,
        order: usize,
        discount: f64,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Invalid("cannot train a language model on an empty corpus".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Invalid(format!("discount must be in (0, 1), got {discount}")));
        }
        if order == 0 {
            return Err(Error::Invalid("language model order must be >= 1".into()));
        }
        if vocab_size <= 2 {
            return Err(Error::Invalid("vocabulary too small".into()));
        }
        let mut raw: Vec<HashMap<Vec<TokenId>, u64>> = vec![HashMap::new(); order];
        for sent in corpus {
            let ids = sent.ids();
            if let Some(&id) = ids.iter().find(|&&i| i as usize >= vocab_size) {
                return Err(Error::IdOutOfRange { id, size: vocab_size });
            }
            for n in 1..=order {
                for end in 1..ids.len() {
                    if end + 1 < n {
                        continue;
                    }
                    let start = end + 1 - n;
                    *raw[n - 1].entry(ids[start..=end].to_vec()).or_insert(0) += 1;
                }
            }
        }
        let mut counts = vec![HashMap::new(); order];
        counts[order - 1] = raw[order - 1].clone();
        for n in (1..order).rev() {
            let mut adj: HashMap<Vec<TokenId>, u64> = HashMap::new();
            for (gram, &c) in &raw[n - 1] {
                if gram[0] == SOS {
                    adj.insert(gram.clone(), c);
                }
            }
            for longer in raw[n].keys() {
                let suffix = &longer[1..];
                if suffix[0] != SOS {
                    *adj.entry(suffix.to_vec()).or_insert(0) += 1;
                }
            }
            counts[n - 1] = adj;
        }
        Ok(Self::from_counts(order, discount, vocab_size, vocab_hash, counts))
    }

    fn from_counts(
        order: usize,
        discount: f64,
        vocab_size: usize,
        vocab_hash: u64,
        counts: Vec<HashMap<Vec<TokenId>, u64>>,
    ) -> Self {
        let contexts = counts
            .iter()
            .map(|table| {
                let mut ctx: HashMap<Vec<TokenId>, (u64, u64)> = HashMap::new();
                for (gram, &c) in table {
                    let e = ctx.entry(gram[..gram.len() - 1].to_vec()).or_insert((0, 0));
                    e.0 += c;
                    e.1 += 1;
                }
                ctx
            })
            .collect();
        NGramLM {
            order,
            discount,
            vocab_size,
            vocab_hash,
            counts,
            contexts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    /// Adjusted count of an n-gram (0 when unseen).
    pub fn count(&self, gram: &[TokenId]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// Tokens that can follow a context: everything except pad and sos.
    pub fn predictable(&self) -> impl Iterator<Item = TokenId> {
        (0..self.vocab_size as TokenId).filter(|&w| w != PAD && w != SOS)
    }

    fn num_predictable(&self) -> usize {
        self.vocab_size - 2
    }

    /// `p(word | context)`, using at most the last `order - 1` context tokens.
    pub fn prob(&self, context: &[TokenId], word: TokenId) -> f64 {
        if word == PAD || word == SOS || word as usize >= self.vocab_size {
            return 0.0;
        }
        let keep = context.len().min(self.order - 1);
        self.prob_at(&context[context.len() - keep..], word)
    }

    fn prob_at(&self, ctx: &[TokenId], word: TokenId) -> f64 {
        let lower = if ctx.is_empty() {
            1.0 / self.num_predictable() as f64
        } else {
            self.prob_at(&ctx[1..], word)
        };
        let n = ctx.len() + 1;
        match self.contexts[n - 1].get(ctx) {
            None => lower,
            Some(&(sum, types)) => {
                let mut gram = Vec::with_capacity(n);
                gram.extend_from_slice(ctx);
                gram.push(word);
                let c = self.counts[n - 1].get(&gram).copied().unwrap_or(0) as f64;
                let sum = sum as f64;
                (c - self.discount).max(0.0) / sum + self.discount * types as f64 / sum * lower
            }
        }
    }

    /// Per-transition natural-log probabilities of the interior tokens and
    /// the final `eos`.
    pub fn transition_logprobs(&self, seq: &EncodedSequence) -> Vec<f64> {
        let ids = seq.ids();
        (1..ids.len())
            .map(|i| self.prob(&ids[..i], ids[i]).ln())
            .collect()
    }

    pub fn sequence_logprob(&self, seq: &EncodedSequence) -> f64 {
        self.transition_logprobs(seq).iter().sum()
    }

    /// Geometric-mean per-token probability in (0, 1]; 0 for an empty interior.
    pub fn fluency_score(&self, seq: &EncodedSequence) -> f64 {
        if seq.is_empty() {
            return 0.0;
        }
        fluency_from_logprobs(&self.transition_logprobs(seq))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LM_MAGIC);
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&self.discount.to_le_bytes());
        out.extend_from_slice(&self.vocab_hash.to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        for table in &self.counts {
            let mut entries: Vec<_> = table.iter().collect();
            entries.sort();
            out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
            for (gram, &c) in entries {
                for &id in gram {
                    out.extend_from_slice(&id.to_le_bytes());
                }
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a checkpoint. When `expected_hash` is given, the stored
    /// vocabulary hash must match it.
    pub fn from_bytes(bytes: &[u8], expected_hash: Option<u64>) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(6)? != LM_MAGIC {
            return Err(Error::Checkpoint("not a PUPLM1 file".into()));
        }
        let order = r.u32()? as usize;
        let discount = r.f64()?;
        let vocab_hash = r.u64()?;
        let vocab_size = r.u32()? as usize;
        if let Some(expected) = expected_hash {
            if expected != vocab_hash {
                return Err(Error::VocabMismatch {
                    expected,
                    found: vocab_hash,
                });
            }
        }
        if !(1..=8).contains(&order) {
            return Err(Error::Checkpoint(format!("unsupported order {order}")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Checkpoint(format!("bad discount {discount}")));
        }
        if vocab_size <= 2 {
            return Err(Error::Checkpoint("vocabulary too small".into()));
        }
        let mut counts = Vec::with_capacity(order);
        for n in 1..=order {
            let len = r.u64()?;
            // Each entry needs at least n ids plus a count.
            if len > (r.remaining() / (4 * n + 8)) as u64 {
                return Err(Error::Checkpoint("truncated count table".into()));
            }
            let mut table = HashMap::with_capacity(len as usize);
            for _ in 0..len {
                let mut gram = Vec::with_capacity(n);
                for _ in 0..n {
                    let id = r.u32()?;
                    if id as usize >= vocab_size || id == PAD {
                        return Err(Error::Checkpoint(format!("bad token id {id}")));
                    }
                    gram.push(id);
                }
                if gram[1..].contains(&SOS) || (n == 1 && gram[0] == SOS) {
                    return Err(Error::Checkpoint("sos inside an n-gram".into()));
                }
                let c = r.u64()?;
                if c == 0 {
                    return Err(Error::Checkpoint("zero count entry".into()));
                }
                if table.insert(gram, c).is_some() {
                    return Err(Error::Checkpoint("duplicate n-gram".into()));
                }
            }
            counts.push(table);
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self::from_counts(order, discount, vocab_size, vocab_hash, counts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::write(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::write(path, e))
    }

    pub fn load(path: &Path, expected_hash: Option<u64>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_hash)
    }
}

/// `exp(mean(logprobs))`, 0 for an empty slice.
pub fn fluency_from_logprobs(logprobs: &[f64]) -> f64 {
    if logprobs.is_empty() {
        return 0.0;
    }
    (logprobs.iter().sum::<f64>() / logprobs.len() as f64).exp()
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
