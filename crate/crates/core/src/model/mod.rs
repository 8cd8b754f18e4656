//! Failed-interruption classifier.
//!
//! Frame features `H` (d x M) are reduced to an utterance vector by attention
//! pooling, `Q = softmax(W·H)`, `U = H·Qᵀ`, and classified by a five-layer
//! LeakyReLU network. Layered encoder inputs are first collapsed by a
//! softmax-weighted sum over layers, per channel.

mod checkpoint;
mod grad;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureProfile, LayeredEmbedding};
use crate::rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use grad::{apply_gradients, gradients, Gradients};
pub use train::{train, train_from, EpochLoss, Example, TrainConfig, TrainReport};

/// Output widths of the feed-forward head.
pub const HEAD_WIDTHS: [usize; 5] = [512, 512, 128, 32, 4];
pub const LEAKY_SLOPE: f64 = 0.01;

pub(crate) fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

pub(crate) fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Which clip channels the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Both,
    /// Left (others) block zero-masked; shapes unchanged.
    RightOnly,
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "both" => Ok(ChannelMode::Both),
            "right" => Ok(ChannelMode::RightOnly),
            _ => Err(Error::InvalidInput(format!("unknown channel mode {s:?}"))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Both => "2",
            ChannelMode::RightOnly => "right",
        })
    }
}

/// Learnable mixing weights over encoder layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub logits: Vec<f64>,
}

impl LayerWeights {
    pub fn uniform(layers: usize) -> Self {
        LayerWeights { logits: vec![0.0; layers] }
    }

    pub fn effective(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// Attention template `W` of length d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionPooler {
    pub template: Vec<f64>,
}

impl AttentionPooler {
    pub fn zeros(dim: usize) -> Self {
        AttentionPooler { template: vec![0.0; dim] }
    }

    /// Frame weights `Q = softmax(W·H)`.
    pub fn frame_weights(&self, h: &FeatureMatrix) -> Vec<f64> {
        let scores: Vec<f64> = (0..h.cols())
            .map(|m| (0..h.rows()).map(|r| self.template[r] * h.get(r, m)).sum())
            .collect();
        softmax(&scores)
    }
}

/// `U = H·Qᵀ` with `Q = softmax(W·H)` over the M frames.
pub fn attention_pool(h: &FeatureMatrix, pooler: &AttentionPooler) -> Result<Vec<f64>> {
    if pooler.template.len() != h.rows() {
        return Err(Error::Shape(format!(
            "template of length {} for {}-dim features",
            pooler.template.len(),
            h.rows()
        )));
    }
    if h.cols() == 0 {
        return Err(Error::Shape("no frames to pool".into()));
    }
    if h.data().iter().any(|v| !v.is_finite()) || pooler.template.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention pooling input".into()));
    }
    let q = pooler.frame_weights(h);
    Ok((0..h.rows()).map(|r| h.row(r).iter().zip(&q).map(|(a, b)| a * b).sum()).collect())
}

/// Softmax-weighted sum over layers, per channel, stacked along the feature axis.
pub fn layer_sum(emb: &LayeredEmbedding, weights: &LayerWeights) -> Result<FeatureMatrix> {
    if weights.logits.len() != emb.layers() {
        return Err(Error::Shape(format!(
            "{} layer weights for {} layers",
            weights.logits.len(),
            emb.layers()
        )));
    }
    let a = weights.effective();
    let block = emb.dim() * emb.frames();
    let mut data = vec![0.0; emb.channels() * block];
    for c in 0..emb.channels() {
        let out = &mut data[c * block..(c + 1) * block];
        for (l, &w) in a.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(emb.block(c, l)) {
                *o += w * f64::from(x);
            }
        }
    }
    FeatureMatrix::new(emb.channels() * emb.dim(), emb.frames(), data)
}

/// One affine layer, weights stored row-major (`out` x `in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = (0..inputs * outputs).map(|_| dist.sample(rng)).collect();
        Dense { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Feed-forward classifier head; LeakyReLU between layers, none after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardHead {
    pub layers: Vec<Dense>,
}

impl FeedForwardHead {
    pub fn new(inputs: usize, widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut fan_in = inputs;
        let layers = widths
            .iter()
            .map(|&w| {
                let l = Dense::glorot(fan_in, w, rng);
                fan_in = w;
                l
            })
            .collect();
        FeedForwardHead { layers }
    }

    pub fn zeros(inputs: usize, widths: &[usize]) -> Self {
        let mut fan_in = inputs;
        let layers = widths
            .iter()
            .map(|&w| {
                let l = Dense::zeros(fan_in, w);
                fan_in = w;
                l
            })
            .collect();
        FeedForwardHead { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.outputs).collect()
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, u: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = u.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x);
            if i < last {
                x.iter_mut().for_each(|v| *v = leaky(*v));
            }
        }
        x
    }
}

/// Full classifier: optional layer mixing, attention pooling, head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterruptionModel {
    /// Known feature layout, or `None` for ad-hoc shapes.
    pub profile: Option<FeatureProfile>,
    pub channel_mode: ChannelMode,
    pub layers: usize,
    pub channel_dim: usize,
    pub layer_weights: Option<LayerWeights>,
    pub pooler: AttentionPooler,
    pub head: FeedForwardHead,
}

impl InterruptionModel {
    /// Randomly initialised model for a known feature profile.
    pub fn for_profile(profile: FeatureProfile, channel_mode: ChannelMode, seed: u64) -> Self {
        let mut m = Self::with_shape(profile.layers(), profile.channel_dim(), &HEAD_WIDTHS, channel_mode, seed);
        m.profile = Some(profile);
        m
    }

    /// Randomly initialised model for two channels of `layers` x `channel_dim` inputs.
    pub fn with_shape(layers: usize, channel_dim: usize, widths: &[usize], channel_mode: ChannelMode, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "model-init");
        let dim = 2 * channel_dim;
        InterruptionModel {
            profile: None,
            channel_mode,
            layers,
            channel_dim,
            layer_weights: (layers > 1).then(|| LayerWeights::uniform(layers)),
            pooler: AttentionPooler::zeros(dim),
            head: FeedForwardHead::new(dim, widths, &mut rng),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.channel_dim
    }

    pub fn profile_name(&self) -> String {
        self.profile.map_or_else(|| format!("custom {}x(2x{})", self.layers, self.channel_dim), |p| p.to_string())
    }

    pub fn check_input(&self, x: &LayeredEmbedding) -> Result<()> {
        if x.channels() != 2 || x.layers() != self.layers || x.dim() != self.channel_dim || x.frames() == 0 {
            return Err(Error::ProfileMismatch {
                expected: self.profile_name(),
                found: format!("{}x({}x{})x{}", x.layers(), x.channels(), x.dim(), x.frames()),
            });
        }
        if let Some(p) = self.profile {
            if p.frames() != x.frames() {
                return Err(Error::ProfileMismatch {
                    expected: p.to_string(),
                    found: format!("{} frames", x.frames()),
                });
            }
        }
        Ok(())
    }

    /// Channel-stacked frame matrix `H` after layer mixing and channel masking.
    pub fn frame_features(&self, x: &LayeredEmbedding) -> Result<FeatureMatrix> {
        self.check_input(x)?;
        let mut h = match &self.layer_weights {
            Some(w) => layer_sum(x, w)?,
            None => x.to_matrix()?,
        };
        if self.channel_mode == ChannelMode::RightOnly {
            h.zero_rows(0, self.channel_dim);
        }
        Ok(h)
    }

    pub fn logits(&self, x: &LayeredEmbedding) -> Result<Vec<f64>> {
        let h = self.frame_features(x)?;
        let u = attention_pool(&h, &self.pooler)?;
        Ok(self.head.logits(&u))
    }

    /// Class probabilities in [`Class::ALL`] order.
    pub fn forward(&self, x: &LayeredEmbedding) -> Result<[f64; 4]> {
        let logits = self.logits(x)?;
        if logits.len() != Class::COUNT {
            return Err(Error::Shape(format!("head emits {} logits", logits.len())));
        }
        let p = softmax(&logits);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class probabilities".into()));
        }
        Ok([p[0], p[1], p[2], p[3]])
    }

    /// Signs of every hidden pre-activation (`true` = positive), for locating
    /// LeakyReLU kinks.
    pub fn activation_pattern(&self, x: &LayeredEmbedding) -> Result<Vec<bool>> {
        let h = self.frame_features(x)?;
        let mut act = attention_pool(&h, &self.pooler)?;
        let mut out = Vec::new();
        for layer in &self.head.layers[..self.head.layers.len() - 1] {
            let z = layer.forward(&act);
            out.extend(z.iter().map(|&v| v > 0.0));
            act = z.into_iter().map(leaky).collect();
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_weights.as_ref().map_or(0, |w| w.logits.len())
            + self.pooler.template.len()
            + self.head.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
    }

    /// Parameter blocks in declaration order: layer logits, template, then
    /// each head layer's weights and bias.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(w) = &self.layer_weights {
            out.push(&w.logits);
        }
        out.push(&self.pooler.template);
        for l in &self.head.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(w) = &mut self.layer_weights {
            out.push(&mut w.logits);
        }
        out.push(&mut self.pooler.template);
        for l in &mut self.head.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }
}
