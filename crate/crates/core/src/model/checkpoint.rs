//! Binary model checkpoints.
//!
//! Layout (little-endian): `b"IMC1"`, u32 version, u32 profile tag, u32
//! channel mode, u32 layers, u32 channel dim, u32 head depth, one u32 per
//! head width, then every parameter block of
//! [`InterruptionModel::blocks`] as f32 in declaration order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{EmbeddingProfile, FeatureProfile};

use super::{AttentionPooler, ChannelMode, Dense, FeedForwardHead, InterruptionModel, LayerWeights};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IMC1";
const VERSION: u32 = 1;

fn profile_tag(p: Option<FeatureProfile>) -> u32 {
    match p {
        None => 0,
        Some(FeatureProfile::Mfcc) => 1,
        Some(FeatureProfile::Spectrogram) => 2,
        Some(FeatureProfile::Embedding(EmbeddingProfile::Base)) => 3,
        Some(FeatureProfile::Embedding(EmbeddingProfile::Large)) => 4,
        Some(FeatureProfile::Embedding(EmbeddingProfile::Tiny)) => 5,
    }
}

fn profile_from_tag(t: u32) -> Result<Option<FeatureProfile>> {
    Ok(match t {
        0 => None,
        1 => Some(FeatureProfile::Mfcc),
        2 => Some(FeatureProfile::Spectrogram),
        3 => Some(FeatureProfile::Embedding(EmbeddingProfile::Base)),
        4 => Some(FeatureProfile::Embedding(EmbeddingProfile::Large)),
        5 => Some(FeatureProfile::Embedding(EmbeddingProfile::Tiny)),
        _ => return Err(Error::Checkpoint(format!("unknown profile tag {t}"))),
    })
}

pub fn encode_checkpoint(model: &InterruptionModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let widths = model.head.widths();
    let mut header = vec![
        VERSION,
        profile_tag(model.profile),
        match model.channel_mode {
            ChannelMode::Both => 0,
            ChannelMode::RightOnly => 1,
        },
        model.layers as u32,
        model.channel_dim as u32,
        widths.len() as u32,
    ];
    header.extend(widths.iter().map(|&w| w as u32));
    for v in header {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for block in model.blocks() {
        for &v in block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let v: Vec<f64> = bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameter".into()));
        }
        Ok(v)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<InterruptionModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not an IMC1 checkpoint".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let profile = profile_from_tag(c.u32()?)?;
    let channel_mode = match c.u32()? {
        0 => ChannelMode::Both,
        1 => ChannelMode::RightOnly,
        t => return Err(Error::Checkpoint(format!("unknown channel mode {t}"))),
    };
    let layers = c.u32()? as usize;
    let channel_dim = c.u32()? as usize;
    let depth = c.u32()? as usize;
    if depth == 0 || depth > 64 {
        return Err(Error::Checkpoint(format!("implausible head depth {depth}")));
    }
    let widths = (0..depth).map(|_| c.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
    if let Some(p) = profile {
        if p.layers() != layers || p.channel_dim() != channel_dim {
            return Err(Error::Checkpoint(format!("header dims disagree with profile {p}")));
        }
    }

    let layer_weights = if layers > 1 { Some(LayerWeights { logits: c.floats(layers)? }) } else { None };
    let pooler = AttentionPooler { template: c.floats(2 * channel_dim)? };
    let mut fan_in = 2 * channel_dim;
    let mut dense = Vec::with_capacity(depth);
    for &w in &widths {
        let weights = c.floats(fan_in * w)?;
        let bias = c.floats(w)?;
        dense.push(Dense { inputs: fan_in, outputs: w, weights, bias });
        fan_in = w;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(InterruptionModel {
        profile,
        channel_mode,
        layers,
        channel_dim,
        layer_weights,
        pooler,
        head: FeedForwardHead { layers: dense },
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &InterruptionModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<InterruptionModel> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
