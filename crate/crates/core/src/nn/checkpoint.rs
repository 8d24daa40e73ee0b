//! Binary parameter files: magic, model kind, dimensions, vocabulary hash,
//! then every parameter as its shape followed by row-major little-endian
//! `f64` values.

use std::path::Path;

use super::ModelDims;
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::lm::ByteReader;

pub const NN_MAGIC: &[u8; 6] = b"PUPNN1";

const MAX_DIM: u32 = 1 << 20;
const MAX_LAYERS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Seq2Seq,
    Vae,
}

impl ModelKind {
    fn flag(self) -> u8 {
        match self {
            ModelKind::Seq2Seq => 0,
            ModelKind::Vae => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Header {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub latent: usize,
    pub vocab_hash: u64,
}

pub(crate) fn write(header: &Header, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_values() * 8);
    out.extend_from_slice(NN_MAGIC);
    out.push(header.kind.flag());
    for d in [
        header.dims.vocab,
        header.dims.embed,
        header.dims.hidden,
        header.dims.layers,
        header.latent,
    ] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&header.vocab_hash.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, t) in params.iter() {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses and validates the header. The returned reader is positioned at
/// the parameter count.
pub(crate) fn read_header<'a>(bytes: &'a [u8], expected_hash: Option<u64>) -> Result<(Header, ByteReader<'a>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(6)? != NN_MAGIC {
        return Err(Error::Checkpoint("not a PUPNN1 file".into()));
    }
    let kind = match r.take(1)?[0] {
        0 => ModelKind::Seq2Seq,
        1 => ModelKind::Vae,
        k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
    };
    let mut dims = [0u32; 5];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let vocab_hash = r.u64()?;
    if let Some(expected) = expected_hash {
        if expected != vocab_hash {
            return Err(Error::VocabMismatch {
                expected,
                found: vocab_hash,
            });
        }
    }
    let [vocab, embed, hidden, layers, latent] = dims;
    if [vocab, embed, hidden, latent].iter().any(|&d| d > MAX_DIM) || layers > MAX_LAYERS {
        return Err(Error::Checkpoint(format!("implausible dimensions {dims:?}")));
    }
    let dims_struct = ModelDims {
        vocab: vocab as usize,
        embed: embed as usize,
        hidden: hidden as usize,
        layers: layers as usize,
    };
    dims_struct
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    match (kind, latent) {
        (ModelKind::Seq2Seq, 0) => {}
        (ModelKind::Vae, l) if l > 0 => {}
        _ => return Err(Error::Checkpoint(format!("latent size {latent} invalid for {kind:?}"))),
    }
    Ok((
        Header {
            kind,
            dims: dims_struct,
            latent: latent as usize,
            vocab_hash,
        },
        r,
    ))
}

/// Fails unless the file holds at least `values` parameters' worth of data.
pub(crate) fn check_capacity(r: &ByteReader, values: Option<u64>) -> Result<()> {
    match values {
        Some(n) if n <= (r.remaining() / 8) as u64 => Ok(()),
        _ => Err(Error::Checkpoint("file too short for the declared dimensions".into())),
    }
}

/// Fills `skeleton` from the reader; every shape must match.
pub(crate) fn read_params(mut r: ByteReader, skeleton: &mut ParamSet) -> Result<()> {
    let count = r.u32()? as usize;
    if count != skeleton.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {count}",
            skeleton.len()
        )));
    }
    for id in skeleton.ids().collect::<Vec<_>>() {
        let rank = r.u32()? as usize;
        let t = skeleton.get(id);
        if rank != t.rank() {
            return Err(Error::Checkpoint(format!("rank mismatch for {}", skeleton.name(id))));
        }
        for k in 0..rank {
            let d = r.u32()? as usize;
            if d != skeleton.get(id).shape()[k] {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", skeleton.name(id))));
            }
        }
        let name = skeleton.name(id).to_string();
        for v in skeleton.get_mut(id).data_mut() {
            *v = r.f64()?;
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite value in {name}")));
            }
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(())
}

pub(crate) fn save_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

pub(crate) fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
