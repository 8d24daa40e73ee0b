//! Tokenization, vocabulary construction and id-sequence encoding.
//!
//! Every other module speaks in terms of the types defined here: a
//! [`TokenSequence`] is a tokenized sentence, a [`Vocabulary`] maps tokens to
//! dense ids with four fixed specials, and an [`EncodedSequence`] is the
//! `sos ... eos` id form fed to the language model and the networks.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const SOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_SPECIALS: usize = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = [PAD_TOKEN, SOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Interior length cap applied by [`encode`].
pub const MAX_LEN: usize = 15;

/// A tokenized sentence: lowercase, no empty tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Builds a sequence from raw tokens, lowercasing and dropping empties.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSequence(
            tokens
                .into_iter()
                .filter(|t| !t.as_ref().is_empty())
                .map(|t| t.as_ref().to_lowercase())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Lowercases, splits on whitespace and detaches leading/trailing ASCII
/// punctuation as single-character tokens. Apostrophes inside a word stay.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let bytes = word.as_bytes();
        let mut start = 0;
        let mut end = bytes.len();
        while start < end && bytes[start].is_ascii_punctuation() {
            start += 1;
        }
        while end > start && bytes[end - 1].is_ascii_punctuation() {
            end -= 1;
        }
        // ASCII punctuation is single-byte, so these slices are char boundaries.
        for p in word[..start].chars() {
            out.push(p.to_string());
        }
        if start < end {
            out.push(word[start..end].to_string());
        }
        for p in word[end..].chars() {
            out.push(p.to_string());
        }
    }
    TokenSequence(out)
}

/// Token/id bijection with frequencies. Ids 0..4 are the specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, TokenId>,
    hash: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered list of non-special `(token, freq)`
    /// entries; ids are assigned in order after the specials.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0u64; NUM_SPECIALS];
        for (tok, f) in entries {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad vocabulary token {tok:?}")));
            }
            tokens.push(tok);
            freqs.push(f);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let mut v = Vocabulary {
            tokens,
            freqs,
            index,
            hash: 0,
        };
        v.hash = hash_bytes(v.export_string().as_bytes());
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::IdOutOfRange {
                id,
                size: self.len(),
            })
    }

    pub fn freq(&self, id: TokenId) -> u64 {
        self.freqs.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Stable content hash, used to tie checkpoints to the vocabulary they
    /// were trained with.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    fn export_string(&self) -> String {
        let mut s = String::new();
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            s.push_str(&format!("{t}\t{i}\t{f}\n"));
        }
        s
    }

    /// Writes `token<TAB>id<TAB>freq` lines, specials first.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.export_string().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.export_string()).map_err(|e| Error::write(path, e))
    }

    /// Parses the export format. Ids must be dense and the specials must
    /// occupy 0..4 in their fixed order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (tok, id, freq) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(i), Some(f), None) => (t, i, f),
                _ => return Err(Error::parse(line_no, "expected token<TAB>id<TAB>freq")),
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad id {id:?}")))?;
            let freq: u64 = freq
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad frequency {freq:?}")))?;
            let expected = entries.len();
            if id != expected {
                return Err(Error::parse(
                    line_no,
                    format!("ids must be dense: expected {expected}, found {id}"),
                ));
            }
            if id < NUM_SPECIALS {
                if tok != SPECIAL_TOKENS[id] {
                    return Err(Error::parse(
                        line_no,
                        format!("id {id} must be {}", SPECIAL_TOKENS[id]),
                    ));
                }
            }
            entries.push((tok.to_string(), freq));
        }
        if entries.len() < NUM_SPECIALS {
            return Err(Error::parse(
                entries.len() + 1,
                "vocabulary is missing special tokens",
            ));
        }
        Vocabulary::from_entries(entries.into_iter().skip(NUM_SPECIALS))
            .map_err(|e| Error::parse(0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::parse(&text)
    }
}

pub(crate) fn hash_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Counts tokens and keeps up to `max_size` with frequency at least
/// `min_freq`, ordered by frequency (descending) then lexicographically.
pub fn build_vocabulary(corpus: &[TokenSequence], min_freq: u64, max_size: usize) -> Vocabulary {
    let min_freq = min_freq.max(1);
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sent in corpus {
        for tok in sent.iter() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_size);
    Vocabulary::from_entries(kept.into_iter().map(|(t, c)| (t.to_string(), c)))
        .expect("tokenized corpus yields valid vocabulary entries")
}

/// `sos`, up to `max_len` interior ids, `eos`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedSequence {
    ids: Vec<TokenId>,
}

impl EncodedSequence {
    /// Wraps interior ids with `sos`/`eos`, truncating to `max_len`.
    pub fn from_interior(interior: &[TokenId], max_len: usize) -> Self {
        let n = interior.len().min(max_len);
        let mut ids = Vec::with_capacity(n + 2);
        ids.push(SOS);
        ids.extend_from_slice(&interior[..n]);
        ids.push(EOS);
        EncodedSequence { ids }
    }

    /// Validates a full id list (with `sos`/`eos`) against a vocabulary size.
    pub fn from_ids(ids: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        if ids.len() < 2 || ids[0] != SOS || *ids.last().unwrap() != EOS {
            return Err(Error::Invalid(
                "encoded sequence must start with sos and end with eos".into(),
            ));
        }
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                size: vocab_size,
            });
        }
        if ids[1..ids.len() - 1]
            .iter()
            .any(|&i| i == SOS || i == EOS || i == PAD)
        {
            return Err(Error::Invalid(
                "interior of an encoded sequence must not hold pad/sos/eos".into(),
            ));
        }
        Ok(EncodedSequence { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn interior(&self) -> &[TokenId] {
        &self.ids[1..self.ids.len() - 1]
    }

    /// Number of interior tokens.
    pub fn len(&self) -> usize {
        self.ids.len() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode(vocab: &Vocabulary, tokens: &TokenSequence) -> EncodedSequence {
    encode_with_len(vocab, tokens, MAX_LEN)
}

pub fn encode_with_len(vocab: &Vocabulary, tokens: &TokenSequence, max_len: usize) -> EncodedSequence {
    let interior: Vec<TokenId> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id_or_unk(t))
        .collect();
    EncodedSequence::from_interior(&interior, max_len)
}

/// Maps ids back to tokens, dropping pad/sos/eos. `unk` decodes to `<unk>`.
pub fn decode_ids(vocab: &Vocabulary, ids: &[TokenId]) -> Result<TokenSequence> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let tok = vocab.token(id)?;
        if matches!(id, PAD | SOS | EOS) {
            continue;
        }
        out.push(tok.to_string());
    }
    Ok(TokenSequence(out))
}

/// Reads a one-sentence-per-line corpus, skipping blank lines.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let toks = tokenize(&line);
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<TokenSequence>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(std::io::BufReader::new(f))
}

/// Encoded corpus format: one sequence per line, space-separated ids
/// including `sos` and `eos`.
pub fn write_encoded<W: Write>(mut w: W, corpus: &[EncodedSequence]) -> Result<()> {
    for seq in corpus {
        let line: Vec<String> = seq.ids().iter().map(|i| i.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn parse_encoded(text: &str, vocab_size: usize) -> Result<Vec<EncodedSequence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ids = line
            .split_ascii_whitespace()
            .map(|t| {
                t.parse::<TokenId>()
                    .map_err(|_| Error::parse(i + 1, format!("bad token id {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = EncodedSequence::from_ids(ids, vocab_size)
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(words: &[&str]) -> TokenSequence {
        TokenSequence::from_tokens(words.iter().copied())
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("how can i work in microsoft"),
            seq(&["how", "can", "i", "work", "in", "microsoft"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Don't stop!"), seq(&["don't", "stop", "!"]));
        assert_eq!(tokenize("  (Hello),  World?! "), seq(&["(", "hello", ")", ",", "world", "?", "!"]));
        assert_eq!(tokenize("..."), seq(&[".", ".", "."]));
        assert_eq!(tokenize("Ünïcode ok"), seq(&["ünïcode", "ok"]));
    }

    #[test]
    fn vocabulary_min_freq_and_specials() {
        let corpus = vec![seq(&["a", "a", "a", "b", "b", "b", "b"])];
        let v = build_vocabulary(&corpus, 4, 100);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), Some(4));
        assert_eq!(v.id("a"), None);
        assert_eq!(v.id_or_unk("a"), UNK);
        assert_eq!(v.token(0).unwrap(), PAD_TOKEN);
        assert_eq!(v.token(3).unwrap(), UNK_TOKEN);
    }

    #[test]
    fn empty_corpus_gives_specials_only() {
        let v = build_vocabulary(&[], 4, 100);
        assert_eq!(v.len(), NUM_SPECIALS);
    }

    #[test]
    fn tie_break_at_cap_is_lexicographic() {
        // "c" is most frequent; "a" and "b" tie for the last slot.
        let corpus = vec![seq(&["c", "c", "c", "b", "b", "a", "a"])];
        let v = build_vocabulary(&corpus, 1, 2);
        assert_eq!(v.id("c"), Some(4));
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn encode_truncates_and_wraps() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let corpus = vec![TokenSequence::from_tokens(&words)];
        let v = build_vocabulary(&corpus, 1, 100);
        let e = encode(&v, &corpus[0]);
        assert_eq!(e.ids().len(), 17);
        assert_eq!(e.ids()[0], SOS);
        assert_eq!(*e.ids().last().unwrap(), EOS);

        assert_eq!(encode(&v, &TokenSequence::default()).ids(), &[SOS, EOS]);
        assert_eq!(encode(&v, &seq(&["zyzzyva"])).interior(), &[UNK]);
    }

    #[test]
    fn decode_examples() {
        let corpus = vec![seq(&["x", "y", "z"])];
        let v = build_vocabulary(&corpus, 1, 100);
        let ids = [SOS, v.id("y").unwrap(), v.id("z").unwrap(), EOS];
        assert_eq!(decode_ids(&v, &ids).unwrap(), seq(&["y", "z"]));
        assert!(decode_ids(&v, &[SOS, EOS]).unwrap().is_empty());
        assert!(matches!(
            decode_ids(&v, &[SOS, 99, EOS]),
            Err(Error::IdOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn export_parse_round_trip() {
        let corpus = vec![seq(&["b", "a", "a", "c"])];
        let v = build_vocabulary(&corpus, 1, 10);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<pad>\t0\t0\n<sos>\t1\t0\n"));
        let back = Vocabulary::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn parse_rejects_bad_vocab() {
        assert!(Vocabulary::parse("").is_err());
        assert!(Vocabulary::parse("<pad>\t0\t0\n<sos>\t1\t0\n<eos>\t2\t0\n").is_err());
        assert!(Vocabulary::parse("<pad>\t0\t0\n<sos>\t1\t0\n<eos>\t2\t0\n<unk>\t3\t0\nx\t5\t1\n").is_err());
        assert!(Vocabulary::parse("<sos>\t0\t0\n").is_err());
        assert!(Vocabulary::parse("<pad>\t0\t0\n<sos>\t1\t0\n<eos>\t2\t0\n<unk>\t3\t0\nx\t4\t1\nx\t5\t1\n").is_err());
    }

    #[test]
    fn encoded_corpus_round_trip() {
        let corpus = vec![seq(&["a", "b"]), seq(&["b"])];
        let v = build_vocabulary(&corpus, 1, 10);
        let enc: Vec<_> = corpus.iter().map(|s| encode(&v, s)).collect();
        let mut buf = Vec::new();
        write_encoded(&mut buf, &enc).unwrap();
        let back = parse_encoded(std::str::from_utf8(&buf).unwrap(), v.len()).unwrap();
        assert_eq!(back, enc);
        assert!(parse_encoded("1 99 2\n", v.len()).is_err());
        assert!(parse_encoded("1 4\n", v.len()).is_err());
    }
}
