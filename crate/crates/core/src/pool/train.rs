//! Batched self-supervised training of the pooling head, and inference helpers.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::forward::{backward_wound, forward_wound, sample_wound_tokens, TokenSet, WoundForward};
use super::loss::{ssl_loss_and_grad, LossParts, SslConfig};
use super::params::{HeadParams, HeadShape};
use crate::corpus::{EmbeddingSet, FeatureContainer, ViewPair};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{seeded, STREAM_HEAD_TRAIN};

/// Instances per parallel work unit; partial gradients are summed in unit order.
const WORK_UNIT: usize = 8;

/// Both views' tokens for one wound.
#[derive(Debug, Clone)]
pub struct WoundPair {
    pub view_a: TokenSet,
    pub view_b: TokenSet,
}

/// Per-view token seed so that capped subsamples differ across wounds.
fn token_seed(seed: u64, instance: usize, view: u64) -> u64 {
    seed ^ ((instance as u64) << 1 | view).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One training instance per wound per pair, in input order. Tokens are sampled once.
pub fn wound_pairs(pairs: &[ViewPair], cap: Option<usize>, seed: u64) -> Result<Vec<WoundPair>> {
    let mut out = Vec::new();
    for pair in pairs {
        for wound in pair.view_a.wounds() {
            let i = out.len();
            out.push(WoundPair {
                view_a: sample_wound_tokens(&pair.view_a, &wound.id, cap, token_seed(seed, i, 0))?,
                view_b: sample_wound_tokens(&pair.view_b, &wound.id, cap, token_seed(seed, i, 1))?,
            });
        }
    }
    Ok(out)
}

/// Loss of one batch and its gradient over the flat parameter vector.
pub fn batch_loss_and_grad(batch: &[&WoundPair], p: &HeadParams, cfg: &SslConfig) -> Result<(LossParts, Vec<f64>)> {
    let d = p.shape().dim;
    let forwards: Vec<(WoundForward, WoundForward)> = batch
        .par_iter()
        .map(|w| Ok((forward_wound(&w.view_a, p)?, forward_wound(&w.view_b, p)?)))
        .collect::<Result<_>>()?;
    let fa: Vec<f64> = forwards.iter().flat_map(|f| f.0.embedding.iter().copied()).collect();
    let fb: Vec<f64> = forwards.iter().flat_map(|f| f.1.embedding.iter().copied()).collect();
    let lg = ssl_loss_and_grad(&fa, &fb, d, cfg)?;

    let partials: Vec<Vec<f64>> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(WORK_UNIT)
        .map(|unit| {
            let mut g = vec![0.0; p.n_params()];
            for &i in unit {
                let rows = i * d..(i + 1) * d;
                backward_wound(&batch[i].view_a, p, &forwards[i].0, &lg.grad_a[rows.clone()], &mut g);
                backward_wound(&batch[i].view_b, p, &forwards[i].1, &lg.grad_b[rows], &mut g);
            }
            g
        })
        .collect();
    let mut grad = vec![0.0; p.n_params()];
    for part in partials {
        for (g, v) in grad.iter_mut().zip(part) {
            *g += v;
        }
    }
    Ok((lg.parts, grad))
}

#[derive(Debug, Clone)]
pub struct HeadTraining {
    pub params: HeadParams,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Trains a freshly initialized head on the wounds of `pairs`. Each epoch visits
/// every wound once in a seeded order; a trailing batch of one wound is dropped
/// because the losses need at least two rows.
pub fn train_head(pairs: &[ViewPair], cfg: &SslConfig) -> Result<HeadTraining> {
    cfg.validate()?;
    let first = pairs.first().ok_or_else(|| Error::Invalid("no view pairs to train on".into()))?;
    let shape = HeadShape {
        channels: first.view_a.channels(),
        hidden: cfg.hidden,
        dim: cfg.dim,
    };
    let instances = wound_pairs(pairs, cfg.token_cap, cfg.seed)?;
    if instances.len() < 2 {
        return Err(Error::Invalid(format!(
            "training needs at least 2 wounds, got {}",
            instances.len()
        )));
    }
    let mut params = HeadParams::init(shape, cfg.pooling, cfg.eps_ln, cfg.seed)?;
    let mut adam = Adam::new(
        params.n_params(),
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let n = instances.len();
    let per_epoch = n / cfg.batch_size + usize::from(n % cfg.batch_size >= 2);
    let total_steps = per_epoch * cfg.epochs;
    let mut rng = seeded(cfg.seed, STREAM_HEAD_TRAIN);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<&WoundPair> = idx.iter().map(|&i| &instances[i]).collect();
            let (parts, grad) = batch_loss_and_grad(&batch, &params, cfg)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let lr = cfg.lr_schedule.at(cfg.learning_rate, step, total_steps);
            adam.step(params.as_flat_mut(), &grad, lr);
            step += 1;
            sum += parts.total;
            count += 1;
        }
        loss_history.push(sum / count as f64);
    }
    Ok(HeadTraining { params, loss_history })
}

/// Embedding of one wound.
pub fn embed_wound(fc: &FeatureContainer, wound: &str, p: &HeadParams, cap: Option<usize>, seed: u64) -> Result<Vec<f64>> {
    let tokens = sample_wound_tokens(fc, wound, cap, seed)?;
    Ok(forward_wound(&tokens, p)?.embedding)
}

/// Mean of the wound embeddings of one image.
pub fn embed_image(fc: &FeatureContainer, p: &HeadParams, cap: Option<usize>, seed: u64) -> Result<Vec<f64>> {
    if fc.wounds().is_empty() {
        return Err(Error::Invalid(format!("{} has no wounds to embed", fc.item())));
    }
    let mut sum = vec![0.0; p.shape().dim];
    for w in fc.wounds() {
        for (s, v) in sum.iter_mut().zip(embed_wound(fc, &w.id, p, cap, seed)?) {
            *s += v;
        }
    }
    let k = fc.wounds().len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

pub fn embed_containers(containers: &[FeatureContainer], p: &HeadParams, cap: Option<usize>, seed: u64) -> Result<EmbeddingSet> {
    let rows = containers
        .par_iter()
        .map(|fc| embed_image(fc, p, cap, seed))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_rows(containers.iter().map(|fc| fc.item().clone()).collect(), &rows)
}

/// Per-dimension population standard deviation of the embedding rows.
pub fn per_dim_std(e: &EmbeddingSet) -> Vec<f64> {
    let n = e.len() as f64;
    (0..e.dim())
        .map(|k| {
            let col: Vec<f64> = (0..e.len()).map(|i| e.row(i)[k]).collect();
            let mean = col.iter().sum::<f64>() / n;
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        })
        .collect()
}
