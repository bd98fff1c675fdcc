use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_TRIPLET_SPACE};

/// An anchor with an unordered reference pair, `left < right`, as item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletIndex {
    pub anchor: usize,
    pub left: usize,
    pub right: usize,
}

/// Number of (anchor, unordered reference pair) triplets over `n` items: `n * C(n-1, 2)`.
pub fn universe_size(n: usize) -> u64 {
    if n < 3 {
        return 0;
    }
    let m = (n - 1) as u64;
    n as u64 * (m * (m - 1) / 2)
}

/// Sample size for a budget fraction, floored.
pub fn budget_count(universe: u64, fraction: f64) -> u64 {
    ((fraction * universe as f64) + 1e-9).floor() as u64
}

/// Decodes a canonical-order index into its triplet.
///
/// Canonical order: anchors ascending, then `left` ascending, then `right` ascending,
/// with the anchor excluded from the reference pool.
pub fn triplet_at(n: usize, idx: u64) -> TripletIndex {
    let m = n - 1;
    let per_anchor = (m * (m - 1) / 2) as u64;
    let anchor = (idx / per_anchor) as usize;
    let mut p = (idx % per_anchor) as usize;
    // walk rows of the upper triangle over the m references
    let mut a = 0;
    while p >= m - 1 - a {
        p -= m - 1 - a;
        a += 1;
    }
    let b = a + 1 + p;
    let lift = |r: usize| if r >= anchor { r + 1 } else { r };
    TripletIndex {
        anchor,
        left: lift(a),
        right: lift(b),
    }
}

/// All triplets in canonical order.
pub fn exhaustive_triplets(n: usize) -> Vec<TripletIndex> {
    let mut out = Vec::with_capacity(universe_size(n) as usize);
    for anchor in 0..n {
        for left in 0..n {
            if left == anchor {
                continue;
            }
            for right in left + 1..n {
                if right != anchor {
                    out.push(TripletIndex { anchor, left, right });
                }
            }
        }
    }
    out
}

/// Uniform sample without replacement of `floor(fraction * |universe|)` triplets,
/// returned in canonical order. `fraction == 1` yields the whole universe.
pub fn sample_triplet_space(n_items: usize, fraction: f64, seed: u64) -> Result<Vec<TripletIndex>> {
    if n_items < 3 {
        return Err(Error::Invalid(format!("triplet sampling needs at least 3 items, got {n_items}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("budget fraction {fraction} outside (0, 1]")));
    }
    let universe = universe_size(n_items);
    if fraction == 1.0 {
        return Ok(exhaustive_triplets(n_items));
    }
    let k = budget_count(universe, fraction);
    if k == 0 {
        return Err(Error::Invalid(format!(
            "budget {fraction} of {universe} triplets floors to zero"
        )));
    }
    let mut rng = seeded(seed, STREAM_TRIPLET_SPACE);
    let mut picked: Vec<u64> = if universe <= usize::MAX as u64 {
        index::sample(&mut rng, universe as usize, k as usize)
            .into_iter()
            .map(|i| i as u64)
            .collect()
    } else {
        return Err(Error::Invalid("triplet universe too large".into()));
    };
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| triplet_at(n_items, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universe_counts() {
        assert_eq!(universe_size(53), 70278);
        assert_eq!(universe_size(3), 3);
        assert_eq!(universe_size(60), 60 * 1711);
        assert_eq!(budget_count(70278, 0.1), 7027);
    }

    #[test]
    fn decoding_matches_enumeration() {
        for n in 3..9 {
            let all = exhaustive_triplets(n);
            assert_eq!(all.len() as u64, universe_size(n));
            for (i, t) in all.iter().enumerate() {
                assert_eq!(triplet_at(n, i as u64), *t);
            }
        }
    }

    #[test]
    fn minimal_universe() {
        let t = sample_triplet_space(3, 1.0, 0).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|t| t.anchor != t.left && t.anchor != t.right && t.left < t.right));
    }

    #[test]
    fn budget_sample_is_deterministic_and_sized() {
        let a = sample_triplet_space(53, 0.1, 11).unwrap();
        let b = sample_triplet_space(53, 0.1, 11).unwrap();
        assert_eq!(a.len(), 7027);
        assert_eq!(a, b);
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), a.len());
        assert_ne!(a, sample_triplet_space(53, 0.1, 12).unwrap());
    }

    #[test]
    fn zero_after_floor_is_error() {
        assert!(sample_triplet_space(3, 0.1, 0).is_err());
        assert!(sample_triplet_space(10, 0.0, 0).is_err());
    }
}
