//! Scores a distance matrix against triplet judgments: anchor-balanced agreement,
//! micro agreement, macro-F1 and Cohen's kappa.
//!
//! A triplet is correct when `D(anchor, unchosen) - D(anchor, chosen) > 0` strictly.
//! For the confusion matrix the predicted class is the nearer reference, and exact
//! ties predict `Right`. Skipped judgments are excluded and counted separately.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{Choice, DistanceMatrix, TripletJudgment};
use crate::error::{Error, Result};

/// `D(anchor, unchosen) - D(anchor, chosen)`.
pub fn triplet_margin(d: &DistanceMatrix, t: &TripletJudgment) -> Result<f64> {
    let (Some(chosen), Some(unchosen)) = (t.chosen(), t.unchosen()) else {
        return Err(Error::Invalid(format!(
            "judgment ({}, {}, {}) is skipped and has no margin",
            t.anchor, t.left, t.right
        )));
    };
    let a = d.require_index(&t.anchor)?;
    let c = d.require_index(chosen)?;
    let u = d.require_index(unchosen)?;
    Ok(d.get(a, u) - d.get(a, c))
}

/// Rows are the judge's choice, columns the prediction, both ordered (Left, Right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion(pub [[u64; 2]; 2]);

impl Confusion {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> u64 {
        self.0[0][0] + self.0[1][1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub balanced: f64,
    pub micro: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub macro_f1: f64,
    pub kappa: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub balanced_agreement: f64,
    pub micro_agreement: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    pub n_triplets: usize,
    pub n_anchors: usize,
    pub n_skipped: usize,
    /// Judgments whose two reference distances were exactly equal.
    pub n_ties: usize,
    pub confusion: Confusion,
}

struct Scored {
    anchor: usize,
    margin: f64,
    expert: usize,
    predicted: usize,
}

const LEFT: usize = 0;
const RIGHT: usize = 1;

fn score_all(d: &DistanceMatrix, judgments: &[TripletJudgment]) -> Result<(Vec<Scored>, usize)> {
    let mut scored = Vec::with_capacity(judgments.len());
    let mut skipped = 0;
    for t in judgments {
        let expert = match t.choice {
            Choice::Left => LEFT,
            Choice::Right => RIGHT,
            Choice::Skipped => {
                skipped += 1;
                continue;
            }
        };
        let a = d.require_index(&t.anchor)?;
        let l = d.require_index(&t.left)?;
        let r = d.require_index(&t.right)?;
        let margin = triplet_margin(d, t)?;
        let predicted = if d.get(a, l) < d.get(a, r) { LEFT } else { RIGHT };
        scored.push(Scored {
            anchor: a,
            margin,
            expert,
            predicted,
        });
    }
    if scored.is_empty() {
        return Err(Error::Invalid("no non-skipped judgments to score".into()));
    }
    Ok((scored, skipped))
}

fn agreement_of(scored: &[Scored]) -> (Agreement, usize) {
    let mut per_anchor: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    let mut correct = 0u64;
    for s in scored {
        let hit = s.margin > 0.0;
        let e = per_anchor.entry(s.anchor).or_default();
        e.1 += 1;
        if hit {
            e.0 += 1;
            correct += 1;
        }
    }
    let balanced = per_anchor.values().map(|&(c, n)| c as f64 / n as f64).sum::<f64>() / per_anchor.len() as f64;
    (
        Agreement {
            balanced,
            micro: correct as f64 / scored.len() as f64,
        },
        per_anchor.len(),
    )
}

fn classification_of(scored: &[Scored]) -> Classification {
    let mut confusion = Confusion::default();
    for s in scored {
        confusion.0[s.expert][s.predicted] += 1;
    }
    let m = confusion.0;
    let f1 = |c: usize| {
        let tp = m[c][c] as f64;
        let fp = m[1 - c][c] as f64;
        let fn_ = m[c][1 - c] as f64;
        if tp == 0.0 {
            0.0
        } else {
            let precision = tp / (tp + fp);
            let recall = tp / (tp + fn_);
            2.0 * precision * recall / (precision + recall)
        }
    };
    let macro_f1 = (f1(LEFT) + f1(RIGHT)) / 2.0;
    // kappa from integer counts: (n * correct - sum_c rows_c * cols_c) / (n^2 - sum_c rows_c * cols_c)
    let n = confusion.total() as u128;
    let correct = scored.iter().filter(|s| s.margin > 0.0).count() as u128;
    let chance: u128 = (0..2)
        .map(|c| (m[c][0] + m[c][1]) as u128 * (m[0][c] + m[1][c]) as u128)
        .sum();
    let kappa = if n * n == chance {
        0.0
    } else {
        ((n * correct) as f64 - chance as f64) / (n * n - chance) as f64
    };
    Classification {
        macro_f1,
        kappa,
        confusion,
    }
}

pub fn agreement(d: &DistanceMatrix, judgments: &[TripletJudgment]) -> Result<Agreement> {
    let (scored, _) = score_all(d, judgments)?;
    Ok(agreement_of(&scored).0)
}

pub fn classification_metrics(d: &DistanceMatrix, judgments: &[TripletJudgment]) -> Result<Classification> {
    let (scored, _) = score_all(d, judgments)?;
    Ok(classification_of(&scored))
}

pub fn evaluate_report(d: &DistanceMatrix, judgments: &[TripletJudgment]) -> Result<MetricsReport> {
    let (scored, n_skipped) = score_all(d, judgments)?;
    let (agr, n_anchors) = agreement_of(&scored);
    let cls = classification_of(&scored);
    Ok(MetricsReport {
        balanced_agreement: agr.balanced,
        micro_agreement: agr.micro,
        macro_f1: cls.macro_f1,
        kappa: cls.kappa,
        n_triplets: scored.len(),
        n_anchors,
        n_skipped,
        n_ties: scored.iter().filter(|s| s.margin == 0.0).count(),
        confusion: cls.confusion,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let rows: [(&str, String); 9] = [
            ("Bal. Agr.", format!("{:.1}%", 100.0 * self.balanced_agreement)),
            ("Micro", format!("{:.1}%", 100.0 * self.micro_agreement)),
            ("Macro-F1", format!("{:.1}%", 100.0 * self.macro_f1)),
            ("kappa", format!("{:.3}", self.kappa)),
            ("triplets", self.n_triplets.to_string()),
            ("anchors", self.n_anchors.to_string()),
            ("skipped", self.n_skipped.to_string()),
            ("ties", self.n_ties.to_string()),
            (
                "confusion",
                format!(
                    "L/L {} L/R {} R/L {} R/R {}",
                    self.confusion.0[0][0], self.confusion.0[0][1], self.confusion.0[1][0], self.confusion.0[1][1]
                ),
            ),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_epoch, ItemId, Source};

    fn id(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn judge(a: &str, l: &str, r: &str, c: Choice) -> TripletJudgment {
        TripletJudgment::new(id(a), id(l), id(r), c, Source::Human, None, synthetic_epoch()).unwrap()
    }

    /// Matrix over ids a,b,c,d,e from an upper-triangle list.
    fn matrix(entries: &[(&str, &str, f64)]) -> DistanceMatrix {
        let ids: Vec<ItemId> = ["a", "b", "c", "d", "e"].iter().map(|s| id(s)).collect();
        let mut v = vec![0.0; 25];
        for &(x, y, d) in entries {
            let i = ids.iter().position(|q| q.as_str() == x).unwrap();
            let j = ids.iter().position(|q| q.as_str() == y).unwrap();
            v[i * 5 + j] = d;
            v[j * 5 + i] = d;
        }
        DistanceMatrix::new(ids, v).unwrap()
    }

    #[test]
    fn margin_cases() {
        let d = matrix(&[("a", "b", 0.2), ("a", "c", 0.5)]);
        let m = triplet_margin(&d, &judge("a", "b", "c", Choice::Left)).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
        let m = triplet_margin(&d, &judge("a", "b", "c", Choice::Right)).unwrap();
        assert!((m + 0.3).abs() < 1e-15);
        let tie = matrix(&[("a", "b", 0.4), ("a", "c", 0.4)]);
        assert_eq!(triplet_margin(&tie, &judge("a", "b", "c", Choice::Left)).unwrap(), 0.0);
        let r = agreement(&tie, &[judge("a", "b", "c", Choice::Left)]).unwrap();
        assert_eq!(r.micro, 0.0);
        assert!(triplet_margin(&d, &judge("a", "b", "c", Choice::Skipped)).is_err());
        assert!(triplet_margin(&d, &judge("a", "b", "zz", Choice::Left)).is_err());
    }

    #[test]
    fn balanced_versus_micro() {
        // anchor a: 1 of 2 correct; anchor b: 1 of 1 correct
        let d = matrix(&[("a", "c", 0.1), ("a", "d", 0.9), ("a", "e", 0.2), ("b", "c", 0.1), ("b", "d", 0.5)]);
        let js = [
            judge("a", "c", "d", Choice::Left),
            judge("a", "d", "e", Choice::Left),
            judge("b", "c", "d", Choice::Left),
        ];
        let r = agreement(&d, &js).unwrap();
        assert!((r.balanced - 0.75).abs() < 1e-15);
        assert!((r.micro - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_anchor_balanced_equals_micro() {
        let d = matrix(&[("a", "b", 0.1), ("a", "c", 0.5), ("a", "d", 0.3)]);
        let js = [
            judge("a", "b", "c", Choice::Left),
            judge("a", "c", "d", Choice::Left),
            judge("a", "b", "d", Choice::Left),
        ];
        let r = agreement(&d, &js).unwrap();
        assert_eq!(r.balanced, r.micro);
    }

    #[test]
    fn perfect_predictions() {
        let d = matrix(&[("a", "b", 0.1), ("a", "c", 0.5), ("b", "c", 0.2), ("b", "a", 0.1)]);
        let js = [judge("a", "b", "c", Choice::Left), judge("a", "c", "b", Choice::Right), judge("b", "c", "a", Choice::Right)];
        let r = evaluate_report(&d, &js).unwrap();
        assert_eq!((r.balanced_agreement, r.micro_agreement, r.macro_f1, r.kappa), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_left_predictions() {
        // predictions always Left (left reference is nearer), truth half Left / half Right
        let d = matrix(&[("a", "b", 0.1), ("a", "c", 0.5)]);
        let js = [judge("a", "b", "c", Choice::Left), judge("a", "b", "c", Choice::Right)];
        let c = classification_metrics(&d, &js).unwrap();
        assert_eq!(c.confusion.0, [[1, 0], [1, 0]]);
        assert!((c.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.kappa, 0.0);
    }

    #[test]
    fn kappa_from_contingency() {
        // expert L: predicted L 4, R 2; expert R: predicted L 1, R 3
        let near_left = matrix(&[("a", "b", 0.1), ("a", "c", 0.5)]);
        let mut js = Vec::new();
        js.extend(std::iter::repeat_n(judge("a", "b", "c", Choice::Left), 4));
        js.extend(std::iter::repeat_n(judge("a", "c", "b", Choice::Left), 2));
        js.extend(std::iter::repeat_n(judge("a", "b", "c", Choice::Right), 1));
        js.extend(std::iter::repeat_n(judge("a", "c", "b", Choice::Right), 3));
        let c = classification_metrics(&near_left, &js).unwrap();
        assert_eq!(c.confusion.0, [[4, 2], [1, 3]]);
        assert!((c.kappa - 0.4).abs() < 1e-12, "{}", c.kappa);
    }

    #[test]
    fn all_skipped_is_error() {
        let d = matrix(&[("a", "b", 0.1)]);
        assert!(evaluate_report(&d, &[judge("a", "b", "c", Choice::Skipped)]).is_err());
        assert!(evaluate_report(&d, &[]).is_err());
    }

    #[test]
    fn skips_and_ties_are_counted() {
        let d = matrix(&[("a", "b", 0.3), ("a", "c", 0.3), ("a", "d", 0.9)]);
        let js = [
            judge("a", "b", "c", Choice::Left),
            judge("a", "b", "d", Choice::Left),
            judge("a", "b", "d", Choice::Skipped),
        ];
        let r = evaluate_report(&d, &js).unwrap();
        assert_eq!((r.n_triplets, r.n_skipped, r.n_ties, r.n_anchors), (2, 1, 1, 1));
        assert!(r.to_table().contains("Bal. Agr."));
    }
}
