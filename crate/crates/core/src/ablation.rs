//! Planted-structure sweeps over SOE embedding dimension and triplet budget.

use std::fmt::Write as _;

use rand::seq::index;
use serde::Serialize;

use crate::corpus::{synth_dataset, SynthConfig, TripletJudgment};
use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_ABLATION};
use crate::soe::{fit_judgments, holdout_split, SoeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub soe: SoeConfig,
    pub dims: Vec<usize>,
    /// Fractions of the training pool, e.g. 0.001 for 0.1%.
    pub budgets: Vec<f64>,
    /// Repetitions per setting; repetition `r` uses seed `seed + r`.
    pub repeats: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            synth: SynthConfig {
                n_items: 60,
                latent_dim: 4,
                ..SynthConfig::default()
            },
            soe: SoeConfig::default(),
            dims: (2..=6).collect(),
            budgets: vec![0.001, 0.01, 0.1, 1.0],
            repeats: 3,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub value: f64,
    /// Held-out balanced agreement per repetition.
    pub agreements: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across repetitions (0 for a single repetition).
    pub std: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub dims: Vec<AblationCell>,
    pub budgets: Vec<AblationCell>,
    pub n_heldout: usize,
}

fn cell(value: f64, agreements: Vec<f64>, n_train: usize) -> AblationCell {
    let n = agreements.len() as f64;
    let mean = agreements.iter().sum::<f64>() / n;
    let std = if agreements.len() > 1 {
        (agreements.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    AblationCell {
        value,
        agreements,
        mean,
        std,
        n_train,
    }
}

/// `floor(fraction * len)` (at least one) judgments drawn without replacement, in pool order.
pub fn budget_subset(pool: &[TripletJudgment], fraction: f64, seed: u64) -> Result<Vec<TripletJudgment>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("budget must lie in (0, 1], got {fraction}")));
    }
    if pool.is_empty() {
        return Err(Error::Invalid("empty training pool".into()));
    }
    let k = ((pool.len() as f64 * fraction + 1e-9).floor() as usize).clamp(1, pool.len());
    let mut rng = seeded(seed, STREAM_ABLATION);
    let mut picked = index::sample(&mut rng, pool.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// Fits SOE on a fixed train/held-out split of an exhaustively labeled planted corpus,
/// once per dimension and once per budget (at the configured SOE dimension).
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let synth = SynthConfig {
        seed: cfg.seed,
        triplet_fraction: 1.0,
        ..cfg.synth.clone()
    };
    let corpus = synth_dataset(&synth)?;
    let ids = corpus.latents.ids();
    let (train, test) = holdout_split(&corpus.triplets, cfg.holdout_fraction, cfg.seed)?;
    let heldout_of = |sub: &[TripletJudgment], soe: &SoeConfig| -> Result<(f64, usize)> {
        let out = fit_judgments(sub, Some(&test), ids, soe)?;
        let a = out
            .heldout
            .ok_or_else(|| Error::Invalid("held-out split is empty".into()))?;
        Ok((a.balanced, out.n_train))
    };

    let mut dims = Vec::new();
    for &d in &cfg.dims {
        let mut agreements = Vec::new();
        let mut n_train = 0;
        for r in 0..cfg.repeats as u64 {
            let soe = SoeConfig {
                dim: d,
                seed: cfg.seed + r,
                ..cfg.soe.clone()
            };
            let (a, n) = heldout_of(&train, &soe)?;
            agreements.push(a);
            n_train = n;
        }
        dims.push(cell(d as f64, agreements, n_train));
    }

    let mut budgets = Vec::new();
    for &b in &cfg.budgets {
        let mut agreements = Vec::new();
        let mut n_train = 0;
        for r in 0..cfg.repeats as u64 {
            let seed = cfg.seed + r;
            let sub = budget_subset(&train, b, seed)?;
            let soe = SoeConfig {
                seed,
                ..cfg.soe.clone()
            };
            let (a, n) = heldout_of(&sub, &soe)?;
            agreements.push(a);
            n_train = n;
        }
        budgets.push(cell(b, agreements, n_train));
    }
    Ok(AblationReport {
        dims,
        budgets,
        n_heldout: test.len(),
    })
}

fn percent_label(f: f64) -> String {
    let p = f * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p}%")
    }
}

impl AblationReport {
    /// Dimension block over budget block, agreement in percent (mean ± std across repetitions).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let block = |out: &mut String, title: &str, cells: &[AblationCell], label: &dyn Fn(f64) -> String| {
            let _ = write!(out, "{title:<16}");
            for c in cells {
                let _ = write!(out, "{:>14}", label(c.value));
            }
            out.push('\n');
            let _ = write!(out, "{:<16}", "agreement (%)");
            for c in cells {
                let _ = write!(out, "{:>14}", format!("{:.1} ± {:.1}", 100.0 * c.mean, 100.0 * c.std));
            }
            out.push('\n');
        };
        block(&mut out, "embedding dim", &self.dims, &|v| format!("{v}"));
        out.push('\n');
        block(&mut out, "no. triplets", &self.budgets, &percent_label);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_subset_sizes() {
        let c = synth_dataset(&SynthConfig {
            n_items: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let n = c.triplets.len();
        assert_eq!(budget_subset(&c.triplets, 1.0, 0).unwrap().len(), n);
        assert_eq!(budget_subset(&c.triplets, 0.1, 0).unwrap().len(), n / 10);
        assert_eq!(budget_subset(&c.triplets, 1e-6, 0).unwrap().len(), 1);
        assert_eq!(budget_subset(&c.triplets, 0.1, 3).unwrap(), budget_subset(&c.triplets, 0.1, 3).unwrap());
        assert!(budget_subset(&c.triplets, 0.0, 0).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(percent_label(0.001), "0.1%");
        assert_eq!(percent_label(0.01), "1%");
        assert_eq!(percent_label(1.0), "100%");
    }

    #[test]
    fn small_sweep_table() {
        let cfg = AblationConfig {
            synth: SynthConfig {
                n_items: 10,
                latent_dim: 2,
                ..SynthConfig::default()
            },
            soe: SoeConfig {
                epochs: 5,
                ..SoeConfig::default()
            },
            dims: vec![1, 2],
            budgets: vec![0.5, 1.0],
            repeats: 2,
            ..AblationConfig::default()
        };
        let r = run_ablation(&cfg).unwrap();
        assert_eq!(r.dims.len(), 2);
        assert_eq!(r.budgets[1].agreements.len(), 2);
        let t = r.to_table();
        assert!(t.contains("embedding dim") && t.contains("50%") && t.contains("100%"));
    }
}
