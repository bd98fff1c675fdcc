//! Per-wound forward pass (token sampling, attention pooling, predictor, layer norm)
//! and its exact backward pass into the flat parameter gradient.

use rand::seq::index;

use super::params::{HeadParams, Pooling};
use crate::corpus::{FeatureContainer, ItemId};
use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_TOKENS};

/// Feature vectors at every sampled cell of one wound, `N x C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub item: ItemId,
    pub wound: String,
    pub channels: usize,
    pub tokens: Vec<f64>,
}

impl TokenSet {
    pub fn new(item: ItemId, wound: impl Into<String>, channels: usize, tokens: Vec<f64>) -> Result<Self> {
        if channels == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(channels) {
            return Err(Error::Dimension(format!(
                "{} token values do not form N >= 1 rows of {channels} channels",
                tokens.len()
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("tokens must be finite".into()));
        }
        Ok(TokenSet {
            item,
            wound: wound.into(),
            channels,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.tokens[n * self.channels..(n + 1) * self.channels]
    }
}

/// One token per mask cell in row-major scan order. When `cap` is below the cell
/// count, a seeded uniform subset of `cap` cells is kept, still in scan order.
pub fn sample_wound_tokens(fc: &FeatureContainer, wound: &str, cap: Option<usize>, seed: u64) -> Result<TokenSet> {
    let mask = fc.wound(wound)?;
    let cells: Vec<usize> = mask.cells.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let cells = match cap {
        Some(0) => return Err(Error::Config("token cap must be positive".into())),
        Some(cap) if cells.len() > cap => {
            let mut rng = seeded(seed, STREAM_TOKENS);
            let mut keep = index::sample(&mut rng, cells.len(), cap).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| cells[i]).collect()
        }
        _ => cells,
    };
    let c = fc.channels();
    let w = fc.width();
    let mut tokens = Vec::with_capacity(cells.len() * c);
    for cell in cells {
        let (y, x) = (cell / w, cell % w);
        tokens.extend((0..c).map(|ch| fc.at(ch, y, x) as f64));
    }
    TokenSet::new(fc.item().clone(), wound, c, tokens)
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct WoundForward {
    /// `N x h` tanh activations (empty under mean pooling).
    hidden: Vec<f64>,
    /// Softmax weights over tokens.
    pub weights: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Normalized predictor output before gain and bias.
    xhat: Vec<f64>,
    inv_std: f64,
    pub embedding: Vec<f64>,
}

fn check_channels(t: &TokenSet, p: &HeadParams) -> Result<()> {
    if t.channels != p.shape().channels {
        return Err(Error::Dimension(format!(
            "tokens have {} channels, head expects {}",
            t.channels,
            p.shape().channels
        )));
    }
    Ok(())
}

/// Attention logits `tanh(t W1 + b1) w2 + b2` per token, plus the tanh activations.
fn attention_logits(t: &TokenSet, p: &HeadParams) -> (Vec<f64>, Vec<f64>) {
    let h = p.shape().hidden;
    let c = t.channels;
    let (w1, b1, w2, b2) = (p.attn_w1(), p.attn_b1(), p.attn_w2(), p.attn_b2());
    let n = t.len();
    let mut hidden = vec![0.0; n * h];
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let row = t.row(i);
        let act = &mut hidden[i * h..(i + 1) * h];
        act.copy_from_slice(b1);
        for (ch, &x) in row.iter().enumerate().take(c) {
            if x != 0.0 {
                let w = &w1[ch * h..(ch + 1) * h];
                for k in 0..h {
                    act[k] += x * w[k];
                }
            }
        }
        let mut l = b2;
        for k in 0..h {
            act[k] = act[k].tanh();
            l += act[k] * w2[k];
        }
        logits[i] = l;
    }
    (hidden, logits)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn mean_tokens(t: &TokenSet) -> Vec<f64> {
    let mut sum = vec![0.0; t.channels];
    for i in 0..t.len() {
        for (s, &x) in sum.iter_mut().zip(t.row(i)) {
            *s += x;
        }
    }
    let n = t.len() as f64;
    sum.into_iter().map(|s| s / n).collect()
}

/// Pools a wound's tokens into one `C`-vector. Under [`Pooling::Mean`] this is the
/// plain arithmetic mean (sum, then divide by `N`).
pub fn attention_pool(t: &TokenSet, p: &HeadParams) -> Result<Vec<f64>> {
    check_channels(t, p)?;
    Ok(pool_with_weights(t, p).0)
}

/// Pooled vector plus the attention weights and hidden activations used to get it.
fn pool_with_weights(t: &TokenSet, p: &HeadParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    match p.pooling {
        Pooling::Mean => {
            let n = t.len();
            (mean_tokens(t), vec![1.0 / n as f64; n], Vec::new())
        }
        Pooling::Attention => {
            let (hidden, logits) = attention_logits(t, p);
            let weights = softmax(&logits);
            let mut pooled = vec![0.0; t.channels];
            for (i, &a) in weights.iter().enumerate() {
                for (s, &x) in pooled.iter_mut().zip(t.row(i)) {
                    *s += a * x;
                }
            }
            (pooled, weights, hidden)
        }
    }
}

/// Linear predictor followed by layer normalization over the `d` outputs.
pub fn forward_embed(pooled: &[f64], p: &HeadParams) -> Result<Vec<f64>> {
    if pooled.len() != p.shape().channels {
        return Err(Error::Dimension(format!(
            "pooled vector has {} entries, head expects {}",
            pooled.len(),
            p.shape().channels
        )));
    }
    Ok(predict(pooled, p).2)
}

/// Returns `(xhat, inv_std, output)`.
fn predict(pooled: &[f64], p: &HeadParams) -> (Vec<f64>, f64, Vec<f64>) {
    let d = p.shape().dim;
    let w = p.pred_w();
    let mut z = p.pred_b().to_vec();
    for (ch, &x) in pooled.iter().enumerate() {
        if x != 0.0 {
            let row = &w[ch * d..(ch + 1) * d];
            for k in 0..d {
                z[k] += x * row[k];
            }
        }
    }
    let mean = z.iter().sum::<f64>() / d as f64;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv_std = 1.0 / (var + p.eps_ln).sqrt();
    let xhat: Vec<f64> = z.iter().map(|v| (v - mean) * inv_std).collect();
    let out = xhat
        .iter()
        .zip(p.ln_gain())
        .zip(p.ln_bias())
        .map(|((x, g), b)| g * x + b)
        .collect();
    (xhat, inv_std, out)
}

/// Full wound forward pass with everything the backward pass needs.
pub fn forward_wound(t: &TokenSet, p: &HeadParams) -> Result<WoundForward> {
    check_channels(t, p)?;
    let (pooled, weights, hidden) = pool_with_weights(t, p);
    let (xhat, inv_std, embedding) = predict(&pooled, p);
    Ok(WoundForward {
        hidden,
        weights,
        pooled,
        xhat,
        inv_std,
        embedding,
    })
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d embedding`.
pub fn backward_wound(t: &TokenSet, p: &HeadParams, fw: &WoundForward, d_out: &[f64], grad: &mut [f64]) {
    let shape = p.shape();
    let (c, h, d) = (shape.channels, shape.hidden, shape.dim);
    let lay = p.layout;

    // layer norm
    let gain = p.ln_gain();
    let mut dxhat = vec![0.0; d];
    for k in 0..d {
        grad[lay.gain + k] += d_out[k] * fw.xhat[k];
        grad[lay.bias + k] += d_out[k];
        dxhat[k] = d_out[k] * gain[k];
    }
    let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
    let mean_dx_x = dxhat.iter().zip(&fw.xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
    let dz: Vec<f64> = (0..d)
        .map(|k| fw.inv_std * (dxhat[k] - mean_dx - fw.xhat[k] * mean_dx_x))
        .collect();

    // predictor
    let pw = p.pred_w();
    let mut dpooled = vec![0.0; c];
    for ch in 0..c {
        let x = fw.pooled[ch];
        let row = &pw[ch * d..(ch + 1) * d];
        let g = &mut grad[lay.pw + ch * d..lay.pw + (ch + 1) * d];
        let mut acc = 0.0;
        for k in 0..d {
            g[k] += x * dz[k];
            acc += row[k] * dz[k];
        }
        dpooled[ch] = acc;
    }
    for k in 0..d {
        grad[lay.pb + k] += dz[k];
    }

    if p.pooling == Pooling::Mean {
        return;
    }

    // softmax attention
    let n = t.len();
    let dweight: Vec<f64> = (0..n)
        .map(|i| t.row(i).iter().zip(&dpooled).map(|(a, b)| a * b).sum())
        .collect();
    let avg: f64 = fw.weights.iter().zip(&dweight).map(|(a, b)| a * b).sum();
    let w2 = p.attn_w2();
    for i in 0..n {
        let dl = fw.weights[i] * (dweight[i] - avg);
        if dl == 0.0 {
            continue;
        }
        grad[lay.b2] += dl;
        let act = &fw.hidden[i * h..(i + 1) * h];
        let mut da = vec![0.0; h];
        for k in 0..h {
            grad[lay.w2 + k] += act[k] * dl;
            da[k] = w2[k] * dl * (1.0 - act[k] * act[k]);
            grad[lay.b1 + k] += da[k];
        }
        for (ch, &x) in t.row(i).iter().enumerate() {
            if x != 0.0 {
                let g = &mut grad[lay.w1 + ch * h..lay.w1 + (ch + 1) * h];
                for k in 0..h {
                    g[k] += x * da[k];
                }
            }
        }
    }
}
