//! Exact gradients of mean cross-entropy with respect to every parameter.

use crate::class::Class;
use crate::error::{Error, Result};
use crate::features::LayeredEmbedding;

use super::{leaky, leaky_grad, softmax, ChannelMode, InterruptionModel};

/// Gradient blocks aligned with [`InterruptionModel::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &InterruptionModel) -> Self {
        Gradients { blocks: model.blocks().iter().map(|b| vec![0.0; b.len()]).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Accumulates `scale * ∂loss/∂θ` for one sample into `grads`; returns the loss.
fn accumulate(
    model: &InterruptionModel,
    x: &LayeredEmbedding,
    label: Class,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let h = model.frame_features(x)?;
    let (d, frames) = h.shape();
    let w = &model.pooler.template;

    // attention pooling
    let scores: Vec<f64> = (0..frames).map(|m| (0..d).map(|r| w[r] * h.get(r, m)).sum()).collect();
    let q = softmax(&scores);
    let u: Vec<f64> = (0..d).map(|r| h.row(r).iter().zip(&q).map(|(a, b)| a * b).sum()).collect();

    // head, keeping layer inputs and pre-activations
    let n_layers = model.head.layers.len();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut act = u;
    for (i, layer) in model.head.layers.iter().enumerate() {
        let z = layer.forward(&act);
        inputs.push(act);
        act = if i + 1 < n_layers { z.iter().map(|&v| leaky(v)).collect() } else { z.clone() };
        pre.push(z);
    }
    let logits = &pre[n_layers - 1];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label.index()];
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} (logits {logits:?})")));
    }

    // head backward
    let offset = usize::from(model.layer_weights.is_some()) + 1;
    let mut dz: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    dz[label.index()] -= 1.0;
    let mut du = Vec::new();
    for k in (0..n_layers).rev() {
        let layer = &model.head.layers[k];
        let xin = &inputs[k];
        {
            let gw = &mut grads.blocks[offset + 2 * k];
            for (o, &g) in dz.iter().enumerate() {
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                let g = g * scale;
                for (acc, &xi) in row.iter_mut().zip(xin) {
                    *acc += g * xi;
                }
            }
        }
        for (acc, &g) in grads.blocks[offset + 2 * k + 1].iter_mut().zip(&dz) {
            *acc += g * scale;
        }
        let mut dx = vec![0.0; layer.inputs];
        for (o, &g) in dz.iter().enumerate() {
            for (acc, &wv) in dx.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                *acc += g * wv;
            }
        }
        if k > 0 {
            for (v, &z) in dx.iter_mut().zip(&pre[k - 1]) {
                *v *= leaky_grad(z);
            }
            dz = dx;
        } else {
            du = dx;
        }
    }

    // pooling backward
    let dq: Vec<f64> = (0..frames).map(|m| (0..d).map(|r| du[r] * h.get(r, m)).sum()).collect();
    let qdq: f64 = q.iter().zip(&dq).map(|(a, b)| a * b).sum();
    let ds: Vec<f64> = q.iter().zip(&dq).map(|(qm, dqm)| qm * (dqm - qdq)).collect();
    {
        let gw = &mut grads.blocks[offset - 1];
        for r in 0..d {
            gw[r] += scale * h.row(r).iter().zip(&ds).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    // layer mixing backward
    if let Some(lw) = &model.layer_weights {
        let a = lw.effective();
        let first_row = if model.channel_mode == ChannelMode::RightOnly { model.channel_dim } else { 0 };
        let mut da = vec![0.0; a.len()];
        for r in first_row..d {
            let (c, row) = (r / x.dim(), r % x.dim());
            let dh: Vec<f64> = (0..frames).map(|m| du[r] * q[m] + w[r] * ds[m]).collect();
            for (l, acc) in da.iter_mut().enumerate() {
                let xs = &x.block(c, l)[row * frames..(row + 1) * frames];
                *acc += dh.iter().zip(xs).map(|(g, &v)| g * f64::from(v)).sum::<f64>();
            }
        }
        let ada: f64 = a.iter().zip(&da).map(|(p, g)| p * g).sum();
        for (acc, (p, g)) in grads.blocks[0].iter_mut().zip(a.iter().zip(&da)) {
            *acc += scale * p * (g - ada);
        }
    }
    Ok(loss)
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn gradients(model: &InterruptionModel, batch: &[(&LayeredEmbedding, Class)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (x, y) in batch {
        loss += accumulate(model, x, *y, scale, &mut grads)? * scale;
    }
    if grads.blocks.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, grads))
}

/// Plain SGD step: `θ ← θ − lr·g`.
pub fn apply_gradients(model: &mut InterruptionModel, grads: &Gradients, learning_rate: f64) {
    for (block, g) in model.blocks_mut().into_iter().zip(&grads.blocks) {
        for (p, gv) in block.iter_mut().zip(g) {
            *p -= learning_rate * gv;
        }
    }
}
