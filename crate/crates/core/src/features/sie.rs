//! SIE1 layered-embedding files.
//!
//! Layout (little-endian): `b"SIE1"`, then u32 version (= 1), u32 layers,
//! u32 dim, u32 frames, u32 channels, followed by
//! `channels * layers * dim * frames` f32 values ordered channel, layer,
//! feature row, frame (frame fastest).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::LayeredEmbedding;

pub const MAGIC: &[u8; 4] = b"SIE1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode(emb: &LayeredEmbedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + emb.values().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, emb.layers() as u32, emb.dim() as u32, emb.frames() as u32, emb.channels() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in emb.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<LayeredEmbedding> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::BadMagic(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(format!("magic {:?} != \"SIE1\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (version, layers, dim, frames, channels) = (word(0), word(1), word(2), word(3), word(4));
    if version != VERSION as usize {
        return Err(Error::BadMagic(format!("unsupported SIE version {version}")));
    }
    let count = channels
        .checked_mul(layers)
        .and_then(|v| v.checked_mul(dim))
        .and_then(|v| v.checked_mul(frames))
        .ok_or_else(|| Error::Shape("header dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(Error::Shape(format!(
            "header declares {count} values ({channels}x{layers}x{dim}x{frames}) but body holds {} bytes",
            body.len()
        )));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    LayeredEmbedding::new(channels, layers, dim, frames, values)
}

pub fn read(path: impl AsRef<Path>) -> Result<LayeredEmbedding> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: impl AsRef<Path>, emb: &LayeredEmbedding) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(emb)).map_err(|e| Error::io(path, e))
}
