//! Planted-structure corpora: Gaussian latents, feature maps that carry them, and
//! triplet labels derived from latent distances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::space::sample_triplet_space;
use super::{
    sequential_ids, synthetic_epoch, Choice, EmbeddingSet, FeatureContainer, ItemId, Source, TripletJudgment,
    ViewPair, WoundMask,
};
use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_SYNTH};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub latent_dim: usize,
    /// Per-view feature noise and per-comparison judgment noise.
    pub noise_sd: f64,
    pub seed: u64,
    /// Multiplier on the standard-normal latents.
    pub latent_scale: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub wounds_per_item: usize,
    /// Fraction of the triplet universe to label; 1 is exhaustive, 0 labels none.
    pub triplet_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_items: 60,
            latent_dim: 4,
            noise_sd: 0.0,
            seed: 0,
            latent_scale: 1.0,
            channels: 16,
            height: 6,
            width: 6,
            wounds_per_item: 2,
            triplet_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub latents: EmbeddingSet,
    pub pairs: Vec<ViewPair>,
    pub triplets: Vec<TripletJudgment>,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_items < 3 {
            return Err(Error::Config(format!("n_items must be >= 3, got {}", self.n_items)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !(self.latent_scale > 0.0 && self.latent_scale.is_finite()) {
            return Err(Error::Config("latent_scale must be positive".into()));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.wounds_per_item == 0 {
            return Err(Error::Config("feature map extents and wound count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.triplet_fraction) {
            return Err(Error::Config("triplet_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed, STREAM_SYNTH);
    let n = cfg.n_items;
    let ids = sequential_ids("item", n);

    let latents: Vec<f64> = (0..n * cfg.latent_dim)
        .map(|_| gauss(&mut rng) * cfg.latent_scale)
        .collect();
    let latents = EmbeddingSet::new(ids.clone(), cfg.latent_dim, latents)?;

    let c = cfg.channels;
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let projection: Vec<f64> = (0..cfg.latent_dim * c).map(|_| gauss(&mut rng) * scale).collect();

    let mut pairs = Vec::with_capacity(n);
    for (i, id) in ids.iter().enumerate() {
        let z = latents.row(i);
        let signal: Vec<f64> = (0..c)
            .map(|ch| (0..cfg.latent_dim).map(|k| z[k] * projection[k * c + ch]).sum())
            .collect();
        let wounds = random_masks(&mut rng, cfg);
        let in_wound: Vec<bool> = (0..cfg.height * cfg.width)
            .map(|cell| wounds.iter().any(|w| w.cells[cell]))
            .collect();
        // content shared by both views; background cells carry texture only
        let hw = cfg.height * cfg.width;
        let mut content = vec![0.0f64; c * hw];
        for ch in 0..c {
            for cell in 0..hw {
                let texture = 0.5 * gauss(&mut rng);
                content[ch * hw + cell] = if in_wound[cell] { signal[ch] + texture } else { texture };
            }
        }
        let view = |rng: &mut ChaCha8Rng| -> Result<FeatureContainer> {
            let values = content
                .iter()
                .map(|&v| (v + cfg.noise_sd * gauss(rng)) as f32)
                .collect();
            FeatureContainer::new(id.clone(), c, cfg.height, cfg.width, values, wounds.clone())
        };
        let a = view(&mut rng)?;
        let b = view(&mut rng)?;
        pairs.push(ViewPair::new(a, b)?);
    }

    let triplets = if cfg.triplet_fraction > 0.0 {
        let space = sample_triplet_space(n, cfg.triplet_fraction, cfg.seed)?;
        space
            .into_iter()
            .map(|t| {
                let dl = euclid(latents.row(t.anchor), latents.row(t.left)) + cfg.noise_sd * gauss(&mut rng);
                let dr = euclid(latents.row(t.anchor), latents.row(t.right)) + cfg.noise_sd * gauss(&mut rng);
                let choice = if dl < dr { Choice::Left } else { Choice::Right };
                TripletJudgment::new(
                    ids[t.anchor].clone(),
                    ids[t.left].clone(),
                    ids[t.right].clone(),
                    choice,
                    Source::Synthetic,
                    None,
                    synthetic_epoch(),
                )
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    Ok(SynthCorpus {
        latents,
        pairs,
        triplets,
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Axis-aligned rectangles covering at least one cell each.
fn random_masks(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<WoundMask> {
    (0..cfg.wounds_per_item)
        .map(|w| {
            let y0 = rng.random_range(0..cfg.height);
            let x0 = rng.random_range(0..cfg.width);
            let y1 = rng.random_range(y0..cfg.height) + 1;
            let x1 = rng.random_range(x0..cfg.width) + 1;
            let mut cells = vec![false; cfg.height * cfg.width];
            for y in y0..y1 {
                for x in x0..x1 {
                    cells[y * cfg.width + x] = true;
                }
            }
            WoundMask {
                id: format!("w{w}"),
                cells,
            }
        })
        .collect()
}

/// Item ids of a corpus in generation order.
pub fn corpus_ids(c: &SynthCorpus) -> Vec<ItemId> {
    c.latents.ids().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::space::universe_size;

    fn small() -> SynthConfig {
        SynthConfig {
            n_items: 12,
            latent_dim: 3,
            noise_sd: 0.3,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small()).unwrap();
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.triplets, b.triplets);
    }

    #[test]
    fn noiseless_labels_follow_latent_distances() {
        let cfg = SynthConfig {
            noise_sd: 0.0,
            ..small()
        };
        let c = synth_dataset(&cfg).unwrap();
        for t in &c.triplets {
            let z = |id: &ItemId| c.latents.row(c.latents.index_of(id).unwrap()).to_vec();
            let closer_left = euclid(&z(&t.anchor), &z(&t.left)) < euclid(&z(&t.anchor), &z(&t.right));
            assert_eq!(t.choice == Choice::Left, closer_left);
        }
    }

    #[test]
    fn exhaustive_count_for_sixty_items() {
        let c = synth_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(c.latents.len(), 60);
        assert_eq!(c.triplets.len() as u64, universe_size(60));
        assert_eq!(c.triplets.len(), 60 * 59 * 58 / 2);
    }

    #[test]
    fn invalid_bounds() {
        for cfg in [
            SynthConfig { n_items: 2, ..small() },
            SynthConfig { latent_dim: 0, ..small() },
            SynthConfig { noise_sd: -1.0, ..small() },
        ] {
            assert!(synth_dataset(&cfg).is_err());
        }
    }

    #[test]
    fn views_share_wounds() {
        let c = synth_dataset(&small()).unwrap();
        for p in &c.pairs {
            assert_eq!(p.view_a.wounds(), p.view_b.wounds());
        }
    }
}
