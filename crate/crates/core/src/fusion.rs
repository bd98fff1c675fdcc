//! Training-free late fusion of two modality distance matrices, and
//! nearest-neighbour retrieval over any distance matrix.

use std::str::FromStr;

use crate::corpus::{DistanceMatrix, ItemId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Per-item variance-weighted convex combination.
    #[default]
    Uncertainty,
    /// `1 - (1 - D_v) * (1 - D_t)` entrywise.
    Similarity,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uncertainty" => Ok(FusionMode::Uncertainty),
            "similarity" => Ok(FusionMode::Similarity),
            other => Err(Error::Config(format!("unknown fusion mode {other:?} (uncertainty|similarity)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Prior weight of the first (vision) modality.
    pub alpha: f64,
    pub mode: FusionMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: 0.7,
            mode: FusionMode::Uncertainty,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// `(D - min) / (max - min)` over all entries. The zero diagonal makes this `D / max`.
pub fn minmax_normalize(d: &DistanceMatrix) -> Result<DistanceMatrix> {
    if d.len() < 2 {
        return Err(Error::Invalid("normalization needs at least 2 items".into()));
    }
    let (min, max) = d
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max == min {
        return Err(Error::Invalid("degenerate distance matrix: all entries equal".into()));
    }
    let span = max - min;
    d.map(|v| (v - min) / span)
}

/// Unbiased variance of each item's distances to all other items.
pub fn modality_confidence(d: &DistanceMatrix) -> Result<Vec<f64>> {
    let n = d.len();
    if n < 3 {
        return Err(Error::Invalid(format!("confidence needs at least 3 items, got {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let others = || d.row(i).iter().enumerate().filter(move |&(j, _)| j != i).map(|(_, &v)| v);
            let mean = others().sum::<f64>() / (n - 1) as f64;
            others().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 2) as f64
        })
        .collect())
}

fn check_pair(v: &DistanceMatrix, t: &DistanceMatrix) -> Result<()> {
    if v.ids() != t.ids() {
        return Err(Error::Invalid(
            "modality matrices must list the same ids in the same order".into(),
        ));
    }
    for (name, m) in [("first", v), ("second", t)] {
        if m.values().iter().any(|&x| x > 1.0) {
            return Err(Error::Invalid(format!(
                "{name} modality matrix is not normalized to [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Per-item weight of the first modality. Equal confidences give exactly `alpha`,
/// as does the 0/0 case where both vanish.
pub fn fusion_weights(sigma_v: &[f64], sigma_t: &[f64], alpha: f64) -> Vec<f64> {
    sigma_v
        .iter()
        .zip(sigma_t)
        .map(|(&sv, &st)| {
            let num = alpha * sv;
            let den = num + (1.0 - alpha) * st;
            if den == 0.0 || sv == st {
                alpha
            } else {
                num / den
            }
        })
        .collect()
}

pub fn uncertainty_fuse(v: &DistanceMatrix, t: &DistanceMatrix, alpha: f64) -> Result<DistanceMatrix> {
    check_alpha(alpha)?;
    check_pair(v, t)?;
    let w = fusion_weights(&modality_confidence(v)?, &modality_confidence(t)?, alpha);
    DistanceMatrix::from_upper(v.ids().to_vec(), |i, j| {
        let (a, b) = (v.get(i, j), t.get(i, j));
        if a == b {
            return a;
        }
        let wij = 0.5 * (w[i] + w[j]);
        wij * a + (1.0 - wij) * b
    })
}

/// `1 - (1 - D_v) * (1 - D_t)`, evaluated as `hi + lo * (1 - hi)` so that rounding
/// never drops an entry below the larger input.
pub fn similarity_fuse(v: &DistanceMatrix, t: &DistanceMatrix) -> Result<DistanceMatrix> {
    check_pair(v, t)?;
    DistanceMatrix::from_upper(v.ids().to_vec(), |i, j| {
        let (a, b) = (v.get(i, j), t.get(i, j));
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        hi + lo * (1.0 - hi)
    })
}

/// Normalizes both raw matrices, then fuses them per `cfg`.
pub fn fuse(v: &DistanceMatrix, t: &DistanceMatrix, cfg: &FusionConfig) -> Result<DistanceMatrix> {
    cfg.validate()?;
    let (v, t) = (minmax_normalize(v)?, minmax_normalize(t)?);
    match cfg.mode {
        FusionMode::Uncertainty => uncertainty_fuse(&v, &t, cfg.alpha),
        FusionMode::Similarity => similarity_fuse(&v, &t),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: ItemId,
    pub distance: f64,
}

/// The `k` nearest items to `id`, self excluded; ties go to the smaller id.
pub fn nearest_neighbors(d: &DistanceMatrix, id: &ItemId, k: usize) -> Result<Vec<Neighbor>> {
    let i = d.require_index(id)?;
    let n = d.len();
    if k == 0 || k >= n {
        return Err(Error::Invalid(format!("k must lie in [1, {}], got {k}", n.saturating_sub(1))));
    }
    let mut others: Vec<(f64, &ItemId)> = (0..n).filter(|&j| j != i).map(|j| (d.get(i, j), &d.ids()[j])).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(others
        .into_iter()
        .take(k)
        .map(|(distance, id)| Neighbor {
            id: id.clone(),
            distance,
        })
        .collect())
}

/// The `k` farthest items, largest distance first; ties go to the smaller id.
pub fn farthest_neighbors(d: &DistanceMatrix, id: &ItemId, k: usize) -> Result<Vec<Neighbor>> {
    let mut all = nearest_neighbors(d, id, d.len() - 1)?;
    all.sort_by(|a, b| b.distance.total_cmp(&a.distance).then_with(|| a.id.cmp(&b.id)));
    all.truncate(k);
    Ok(all)
}
