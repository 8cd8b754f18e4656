//! Feature tensors consumed by the classifier.
//!
//! Every extractor works on the last 5 s of a clip and stacks the two
//! channels along the feature axis: rows `0..d` come from the left (others)
//! channel and rows `d..2d` from the right (interrupter) channel.

mod dsp;
mod matrix;
pub mod sie;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::overlap::CandidateClip;

pub use dsp::frame_count;
pub use matrix::FeatureMatrix;

/// Samples fed to the extractors (the 5 s after the overlap onset).
pub const TAIL_SAMPLES: usize = 80_000;

pub const MFCC_N_FFT: usize = 400;
pub const MFCC_HOP: usize = 200;
pub const MFCC_MELS: usize = 40;
pub const MFCC_COEFFS: usize = 40;
pub const SPEC_N_FFT: usize = 512;
pub const SPEC_HOP: usize = 256;

const LOG_FLOOR: f64 = 1e-10;
const TOP_DB: f64 = 80.0;

/// Pretrained-encoder embedding layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProfile {
    /// 13 layers of 768-dim frames.
    Base,
    /// 25 layers of 1024-dim frames.
    Large,
    /// 3 layers of 16-dim frames; synthetic fixtures only.
    Tiny,
}

impl EmbeddingProfile {
    pub fn layers(self) -> usize {
        match self {
            EmbeddingProfile::Base => 13,
            EmbeddingProfile::Large => 25,
            EmbeddingProfile::Tiny => 3,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            EmbeddingProfile::Base => 768,
            EmbeddingProfile::Large => 1024,
            EmbeddingProfile::Tiny => 16,
        }
    }

    /// Frames for 5 s at a 20 ms shift.
    pub fn frames(self) -> usize {
        249
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingProfile::Base => "base",
            EmbeddingProfile::Large => "large",
            EmbeddingProfile::Tiny => "tiny",
        }
    }
}

impl FromStr for EmbeddingProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(EmbeddingProfile::Base),
            "large" => Ok(EmbeddingProfile::Large),
            "tiny" => Ok(EmbeddingProfile::Tiny),
            _ => Err(Error::InvalidInput(format!("unknown embedding profile {s:?}"))),
        }
    }
}

/// Which extractor produced a feature tensor, fixing its exact shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "profile")]
pub enum FeatureProfile {
    Mfcc,
    Spectrogram,
    Embedding(EmbeddingProfile),
}

impl FeatureProfile {
    pub fn layers(self) -> usize {
        match self {
            FeatureProfile::Embedding(p) => p.layers(),
            _ => 1,
        }
    }

    /// Per-channel feature dimension.
    pub fn channel_dim(self) -> usize {
        match self {
            FeatureProfile::Mfcc => MFCC_COEFFS,
            FeatureProfile::Spectrogram => SPEC_N_FFT / 2 + 1,
            FeatureProfile::Embedding(p) => p.dim(),
        }
    }

    pub fn frames(self) -> usize {
        match self {
            FeatureProfile::Mfcc => frame_count(TAIL_SAMPLES, MFCC_HOP),
            FeatureProfile::Spectrogram => frame_count(TAIL_SAMPLES, SPEC_HOP),
            FeatureProfile::Embedding(p) => p.frames(),
        }
    }

    /// Stacked two-channel feature dimension.
    pub fn dim(self) -> usize {
        2 * self.channel_dim()
    }

    pub fn is_layered(self) -> bool {
        matches!(self, FeatureProfile::Embedding(_))
    }

    /// Parses a profile from a file header, if it matches a known layout.
    pub fn identify(layers: usize, dim: usize, frames: usize) -> Option<FeatureProfile> {
        [
            FeatureProfile::Mfcc,
            FeatureProfile::Spectrogram,
            FeatureProfile::Embedding(EmbeddingProfile::Base),
            FeatureProfile::Embedding(EmbeddingProfile::Large),
            FeatureProfile::Embedding(EmbeddingProfile::Tiny),
        ]
        .into_iter()
        .find(|p| p.layers() == layers && p.channel_dim() == dim && p.frames() == frames)
    }
}

impl fmt::Display for FeatureProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureProfile::Mfcc => write!(f, "mfcc (2x{})x{}", self.channel_dim(), self.frames()),
            FeatureProfile::Spectrogram => write!(f, "spec (2x{})x{}", self.channel_dim(), self.frames()),
            FeatureProfile::Embedding(p) => {
                write!(f, "emb/{} {}x(2x{})x{}", p.as_str(), self.layers(), self.channel_dim(), self.frames())
            }
        }
    }
}

/// Per-layer frame embeddings for each clip channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredEmbedding {
    channels: usize,
    layers: usize,
    dim: usize,
    frames: usize,
    values: Vec<f32>,
}

impl LayeredEmbedding {
    pub fn new(channels: usize, layers: usize, dim: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if channels * layers * dim * frames != values.len() {
            return Err(Error::Shape(format!(
                "{channels}x{layers}x{dim}x{frames} embedding given {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding value {i}")));
        }
        Ok(LayeredEmbedding { channels, layers, dim, frames, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `dim` x `frames` block for one channel and layer.
    pub fn block(&self, channel: usize, layer: usize) -> &[f32] {
        let size = self.dim * self.frames;
        let start = (channel * self.layers + layer) * size;
        &self.values[start..start + size]
    }

    /// Channel-stacked single-layer matrix (`layers` must be 1).
    pub fn to_matrix(&self) -> Result<FeatureMatrix> {
        if self.layers != 1 {
            return Err(Error::Shape(format!("{} layers; expected 1", self.layers)));
        }
        FeatureMatrix::new(
            self.channels * self.dim,
            self.frames,
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Wraps a stacked matrix as a single-layer embedding with `channels` blocks.
    pub fn from_matrix(m: &FeatureMatrix, channels: usize) -> Result<Self> {
        if channels == 0 || m.rows() % channels != 0 {
            return Err(Error::Shape(format!("{} rows cannot split into {channels} channels", m.rows())));
        }
        Self::new(channels, 1, m.rows() / channels, m.cols(), m.data().iter().map(|&v| v as f32).collect())
    }

    /// Checks the layout against a feature profile.
    pub fn check_profile(&self, profile: FeatureProfile) -> Result<()> {
        let want = (2, profile.layers(), profile.channel_dim(), profile.frames());
        let got = (self.channels, self.layers, self.dim, self.frames);
        if want != got {
            return Err(Error::Shape(format!(
                "expected {profile} (C,L,d,M)={want:?}, file has {got:?}"
            )));
        }
        Ok(())
    }
}

/// Reads an SIE1 file and validates it against an embedding profile.
pub fn load_embeddings(path: impl AsRef<Path>, profile: EmbeddingProfile) -> Result<LayeredEmbedding> {
    let emb = sie::read(path)?;
    emb.check_profile(FeatureProfile::Embedding(profile))?;
    Ok(emb)
}

/// Reads any feature file and validates it against `profile`.
pub fn load_features(path: impl AsRef<Path>, profile: FeatureProfile) -> Result<LayeredEmbedding> {
    let emb = sie::read(path)?;
    emb.check_profile(profile)?;
    Ok(emb)
}

fn tail(samples: &[f32]) -> Result<Vec<f64>> {
    if samples.len() < TAIL_SAMPLES {
        return Err(Error::Shape(format!(
            "clip channel has {} samples; at least {TAIL_SAMPLES} required",
            samples.len()
        )));
    }
    Ok(samples[samples.len() - TAIL_SAMPLES..].iter().map(|&s| f64::from(s)).collect())
}

fn check_rate(clip: &CandidateClip) -> Result<()> {
    clip.left.ensure_canonical_rate()?;
    clip.right.ensure_canonical_rate()
}

/// Converts `frames` x `rows` into a `rows` x `frames` matrix.
fn transpose(frames: Vec<Vec<f64>>) -> Result<FeatureMatrix> {
    let cols = frames.len();
    let rows = frames.first().map_or(0, Vec::len);
    let mut data = vec![0.0; rows * cols];
    for (c, frame) in frames.iter().enumerate() {
        for (r, &v) in frame.iter().enumerate() {
            data[r * cols + c] = v;
        }
    }
    FeatureMatrix::new(rows, cols, data)
}

/// 40-coefficient MFCCs from raw channel samples.
pub struct MfccExtractor {
    stft: dsp::Stft,
    mel: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
}

impl Default for MfccExtractor {
    fn default() -> Self {
        let stft = dsp::Stft::new(MFCC_N_FFT, MFCC_HOP);
        let mel = dsp::mel_filterbank(MFCC_MELS, stft.bins(), f64::from(SAMPLE_RATE), 0.0, f64::from(SAMPLE_RATE) / 2.0);
        MfccExtractor { stft, mel, dct: dsp::dct2_ortho(MFCC_COEFFS, MFCC_MELS) }
    }
}

impl MfccExtractor {
    /// `MFCC_COEFFS` x frames for one channel, using its last 5 s.
    pub fn channel(&self, samples: &[f32]) -> Result<FeatureMatrix> {
        let x = tail(samples)?;
        let power = self.stft.power(&x);
        let mut log_mel: Vec<Vec<f64>> = power
            .iter()
            .map(|p| {
                self.mel
                    .iter()
                    .map(|f| 10.0 * f.iter().zip(p).map(|(a, b)| a * b).sum::<f64>().max(LOG_FLOOR).log10())
                    .collect()
            })
            .collect();
        let peak = log_mel.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        log_mel.iter_mut().flatten().for_each(|v| *v = v.max(peak - TOP_DB));
        let coeffs = log_mel
            .iter()
            .map(|m| self.dct.iter().map(|basis| basis.iter().zip(m).map(|(a, b)| a * b).sum()).collect())
            .collect();
        transpose(coeffs)
    }

    pub fn clip(&self, clip: &CandidateClip) -> Result<FeatureMatrix> {
        check_rate(clip)?;
        FeatureMatrix::vstack(&[self.channel(clip.left.samples())?, self.channel(clip.right.samples())?])
    }
}

/// Magnitude spectrogram (257 bins) from raw channel samples.
pub struct SpectrogramExtractor {
    stft: dsp::Stft,
}

impl Default for SpectrogramExtractor {
    fn default() -> Self {
        SpectrogramExtractor { stft: dsp::Stft::new(SPEC_N_FFT, SPEC_HOP) }
    }
}

impl SpectrogramExtractor {
    pub fn channel(&self, samples: &[f32]) -> Result<FeatureMatrix> {
        let x = tail(samples)?;
        let mag = self.stft.power(&x).into_iter().map(|p| p.into_iter().map(f64::sqrt).collect()).collect();
        transpose(mag)
    }

    pub fn clip(&self, clip: &CandidateClip) -> Result<FeatureMatrix> {
        check_rate(clip)?;
        FeatureMatrix::vstack(&[self.channel(clip.left.samples())?, self.channel(clip.right.samples())?])
    }
}

/// MFCC features of a clip, shape (2·40) x 401.
pub fn mfcc(clip: &CandidateClip) -> Result<FeatureMatrix> {
    MfccExtractor::default().clip(clip)
}

/// Magnitude spectrogram of a clip, shape (2·257) x 313.
pub fn spectrogram(clip: &CandidateClip) -> Result<FeatureMatrix> {
    SpectrogramExtractor::default().clip(clip)
}
