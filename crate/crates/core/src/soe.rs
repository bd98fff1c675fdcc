//! Soft ordinal embedding: coordinates fitted to triplet constraints with the hinge
//! `max(0, margin + |x_i - x_j| - |x_i - x_k|)` on plain Euclidean norms,
//! anchor-balanced epoch resampling, and Adam/AMSGrad.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{pairwise_distances, Choice, EmbeddingSet, ItemId, Metric, TripletJudgment};
use crate::error::{Error, Result};
use crate::metrics::{agreement, Agreement};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{seeded, STREAM_SOE, STREAM_SPLIT};

/// Added under the square root when normalizing a difference vector for the gradient.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SoeConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub amsgrad: bool,
    pub anchor_balanced: bool,
    pub init_sd: f64,
    pub seed: u64,
}

impl Default for SoeConfig {
    fn default() -> Self {
        SoeConfig {
            dim: 4,
            margin: 0.0,
            learning_rate: 0.05,
            batch_size: 2048,
            epochs: 50,
            amsgrad: true,
            anchor_balanced: true,
            init_sd: 0.1,
            seed: 0,
        }
    }
}

impl SoeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be a nonnegative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.init_sd > 0.0 && self.init_sd.is_finite()) {
            return bad("init_sd must be positive");
        }
        Ok(())
    }
}

/// `anchor` should lie closer to `closer` than to `farther`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TripletConstraint {
    pub anchor: usize,
    pub closer: usize,
    pub farther: usize,
}

/// Maps non-skipped judgments onto index constraints over `ids`. Returns the
/// constraints and the number of skipped judgments.
pub fn constraints_from_judgments(
    judgments: &[TripletJudgment],
    ids: &[ItemId],
) -> Result<(Vec<TripletConstraint>, usize)> {
    let index: std::collections::HashMap<&ItemId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let lookup = |id: &ItemId| index.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_string()));
    let mut out = Vec::with_capacity(judgments.len());
    let mut skipped = 0;
    for j in judgments {
        let (closer, farther) = match j.choice {
            Choice::Left => (&j.left, &j.right),
            Choice::Right => (&j.right, &j.left),
            Choice::Skipped => {
                skipped += 1;
                continue;
            }
        };
        out.push(TripletConstraint {
            anchor: lookup(&j.anchor)?,
            closer: lookup(closer)?,
            farther: lookup(farther)?,
        });
    }
    Ok((out, skipped))
}

/// Hinge loss summed over `batch` and its exact subgradient with respect to `coords`
/// (`n x dim`, row-major). Inactive hinges and coincident points contribute nothing.
pub fn soe_loss_and_grad(
    coords: &[f64],
    dim: usize,
    batch: &[TripletConstraint],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; coords.len()];
    let loss = accumulate_loss_and_grad(coords, dim, batch, margin, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_loss_and_grad(
    coords: &[f64],
    dim: usize,
    batch: &[TripletConstraint],
    margin: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let n = coords.len() / dim;
    let mut loss = 0.0;
    let mut u_ij = vec![0.0; dim];
    let mut u_ik = vec![0.0; dim];
    for t in batch {
        if t.anchor >= n || t.closer >= n || t.farther >= n {
            return Err(Error::Invalid(format!(
                "triplet ({}, {}, {}) out of range for {n} items",
                t.anchor, t.closer, t.farther
            )));
        }
        let xi = &coords[t.anchor * dim..][..dim];
        let xj = &coords[t.closer * dim..][..dim];
        let xk = &coords[t.farther * dim..][..dim];
        let d_ij = diff_unit(xi, xj, &mut u_ij);
        let d_ik = diff_unit(xi, xk, &mut u_ik);
        let h = margin + d_ij - d_ik;
        if h > 0.0 {
            loss += h;
            for c in 0..dim {
                grad[t.anchor * dim + c] += u_ij[c] - u_ik[c];
                grad[t.closer * dim + c] -= u_ij[c];
                grad[t.farther * dim + c] += u_ik[c];
            }
        }
    }
    Ok(loss)
}

/// Writes `(a - b) / |a - b|` into `unit` (zero when the points coincide) and returns `|a - b|`.
fn diff_unit(a: &[f64], b: &[f64], unit: &mut [f64]) -> f64 {
    let mut sq = 0.0;
    for c in 0..a.len() {
        unit[c] = a[c] - b[c];
        sq += unit[c] * unit[c];
    }
    if sq == 0.0 {
        unit.iter_mut().for_each(|u| *u = 0.0);
        return 0.0;
    }
    let inv = 1.0 / (sq + NORM_EPS).sqrt();
    unit.iter_mut().for_each(|u| *u *= inv);
    sq.sqrt()
}

/// Draws `ceil(T / |A|)` constraints with replacement from each anchor's pool, so
/// every anchor carries equal weight in the epoch. Output is grouped by anchor index.
pub fn anchor_balanced_resample<R: Rng>(triplets: &[TripletConstraint], rng: &mut R) -> Vec<TripletConstraint> {
    if triplets.is_empty() {
        return Vec::new();
    }
    let mut pools: BTreeMap<usize, Vec<TripletConstraint>> = BTreeMap::new();
    for t in triplets {
        pools.entry(t.anchor).or_default().push(*t);
    }
    let q = triplets.len().div_ceil(pools.len());
    let mut out = Vec::with_capacity(q * pools.len());
    for pool in pools.values() {
        for _ in 0..q {
            out.push(pool[rng.random_range(0..pool.len())]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SoeFit {
    pub n_items: usize,
    pub dim: usize,
    /// `n_items x dim`, row-major.
    pub coords: Vec<f64>,
    /// Mean hinge loss per sampled triplet, one entry per epoch.
    pub loss_history: Vec<f64>,
}

pub fn fit_soe(triplets: &[TripletConstraint], n_items: usize, cfg: &SoeConfig) -> Result<SoeFit> {
    cfg.validate()?;
    if n_items < 3 {
        return Err(Error::Invalid(format!("SOE needs at least 3 items, got {n_items}")));
    }
    if triplets.is_empty() {
        return Err(Error::Invalid("no triplet constraints to fit".into()));
    }
    if let Some(t) = triplets
        .iter()
        .find(|t| t.anchor >= n_items || t.closer >= n_items || t.farther >= n_items)
    {
        return Err(Error::Invalid(format!(
            "triplet ({}, {}, {}) references an item beyond {n_items}",
            t.anchor, t.closer, t.farther
        )));
    }
    let dim = cfg.dim;
    let mut rng = seeded(cfg.seed, STREAM_SOE);
    let init = Normal::new(0.0, cfg.init_sd).expect("init_sd validated");
    let mut coords: Vec<f64> = (0..n_items * dim).map(|_| init.sample(&mut rng)).collect();
    let mut opt = Adam::new(
        coords.len(),
        AdamConfig {
            amsgrad: cfg.amsgrad,
            ..AdamConfig::default()
        },
    );
    let mut grad = vec![0.0; coords.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sample = if cfg.anchor_balanced {
            anchor_balanced_resample(triplets, &mut rng)
        } else {
            triplets.to_vec()
        };
        sample.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in sample.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate_loss_and_grad(&coords, dim, batch, cfg.margin, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss;
            opt.step(&mut coords, &grad, cfg.learning_rate);
        }
        history.push(epoch_loss / sample.len() as f64);
    }
    Ok(SoeFit {
        n_items,
        dim,
        coords,
        loss_history: history,
    })
}

/// Splits judgments per anchor, sending `round(fraction * count)` of each anchor's
/// judgments to the held-out side. Deterministic given `seed`; input order is kept
/// within each side.
pub fn holdout_split(
    judgments: &[TripletJudgment],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TripletJudgment>, Vec<TripletJudgment>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("holdout fraction must lie in [0, 1), got {fraction}")));
    }
    let mut by_anchor: BTreeMap<&ItemId, Vec<usize>> = BTreeMap::new();
    for (i, j) in judgments.iter().enumerate() {
        by_anchor.entry(&j.anchor).or_default().push(i);
    }
    let mut rng = seeded(seed, STREAM_SPLIT);
    let mut held = vec![false; judgments.len()];
    for idx in by_anchor.values_mut() {
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        for &i in &idx[..k] {
            held[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (j, h) in judgments.iter().zip(held) {
        if h { test.push(j.clone()) } else { train.push(j.clone()) }
    }
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct SoeOutcome {
    pub embedding: EmbeddingSet,
    pub loss_history: Vec<f64>,
    pub heldout: Option<Agreement>,
    pub n_train: usize,
    pub n_skipped: usize,
}

/// Fits coordinates for `ids` to `train` judgments and, when given, scores the
/// Euclidean embedding on `heldout` judgments.
pub fn fit_judgments(
    train: &[TripletJudgment],
    heldout: Option<&[TripletJudgment]>,
    ids: &[ItemId],
    cfg: &SoeConfig,
) -> Result<SoeOutcome> {
    let (constraints, n_skipped) = constraints_from_judgments(train, ids)?;
    let fit = fit_soe(&constraints, ids.len(), cfg)?;
    let embedding = EmbeddingSet::new(ids.to_vec(), fit.dim, fit.coords)?;
    let heldout = match heldout {
        Some(h) if !h.is_empty() => Some(agreement(&pairwise_distances(&embedding, Metric::Euclidean)?, h)?),
        _ => None,
    };
    Ok(SoeOutcome {
        embedding,
        loss_history: fit.loss_history,
        heldout,
        n_train: constraints.len(),
        n_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(a: usize, j: usize, k: usize) -> TripletConstraint {
        TripletConstraint {
            anchor: a,
            closer: j,
            farther: k,
        }
    }

    #[test]
    fn inactive_hinge() {
        let x = [0.0, 0.0, 1.0, 0.0, 3.0, 0.0];
        let (loss, g) = soe_loss_and_grad(&x, 2, &[t(0, 1, 2)], 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn violated_triplet_loss() {
        let x = [0.0, 0.0, 1.0, 0.0, 3.0, 0.0];
        let (loss, g) = soe_loss_and_grad(&x, 2, &[t(0, 2, 1)], 0.0).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
        // anchor pulled toward item 2 and pushed from item 1: d/dx0 = u02 - u01 = (-1) - (-1) = 0 on x
        assert!((g[0] - 0.0).abs() < 1e-9);
        assert!((g[4] - 1.0).abs() < 1e-9);
        assert!((g[2] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn margin_example() {
        let x = [0.0, 1.0, 1.5];
        let (loss, _) = soe_loss_and_grad(&x, 1, &[t(0, 1, 2)], 1.0).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_have_zero_norm_gradient() {
        let x = [0.0, 0.0, 2.0];
        let (loss, g) = soe_loss_and_grad(&x, 1, &[t(0, 2, 1)], 0.0).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn out_of_range_index() {
        assert!(soe_loss_and_grad(&[0.0, 1.0, 2.0], 1, &[t(0, 1, 5)], 0.0).is_err());
    }

    #[test]
    fn balanced_draw_counts() {
        let mut pool = vec![t(0, 1, 2); 10];
        pool.extend([t(3, 1, 2); 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = anchor_balanced_resample(&pool, &mut rng);
        assert_eq!(s.iter().filter(|c| c.anchor == 0).count(), 6);
        assert_eq!(s.iter().filter(|c| c.anchor == 3).count(), 6);
    }

    #[test]
    fn single_anchor_draws_from_own_pool() {
        let pool = [t(0, 1, 2), t(0, 2, 3)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = anchor_balanced_resample(&pool, &mut rng);
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|c| pool.contains(c)));
    }

    #[test]
    fn collinear_planted_points_are_recovered() {
        // planted positions 0, 1, 3 on a line; every anchor-consistent triplet
        let cons = [t(0, 1, 2), t(1, 0, 2), t(2, 1, 0)];
        let fit = fit_soe(&cons, 3, &SoeConfig::default()).unwrap();
        assert_eq!(*fit.loss_history.last().unwrap(), 0.0);
        let (loss, _) = soe_loss_and_grad(&fit.coords, fit.dim, &cons, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        let d = |a: usize, b: usize| -> f64 {
            (0..fit.dim)
                .map(|c| (fit.coords[a * fit.dim + c] - fit.coords[b * fit.dim + c]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        assert!(d(0, 1) < d(0, 2));
    }

    #[test]
    fn fit_errors() {
        assert!(fit_soe(&[], 5, &SoeConfig::default()).is_err());
        assert!(fit_soe(&[t(0, 1, 9)], 5, &SoeConfig::default()).is_err());
        assert!(fit_soe(&[t(0, 1, 2)], 2, &SoeConfig::default()).is_err());
        let bad = SoeConfig {
            dim: 0,
            ..SoeConfig::default()
        };
        assert!(fit_soe(&[t(0, 1, 2)], 3, &bad).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let cons: Vec<_> = (0..20).map(|i| t(i % 5, (i + 1) % 5, (i + 2) % 5)).collect();
        let cfg = SoeConfig {
            epochs: 5,
            ..SoeConfig::default()
        };
        let a = fit_soe(&cons, 5, &cfg).unwrap();
        let b = fit_soe(&cons, 5, &cfg).unwrap();
        assert_eq!(a.coords, b.coords);
    }
}
