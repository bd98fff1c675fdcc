//! Self-supervised objectives over paired view batches, with exact gradients.

use std::fmt;
use std::str::FromStr;

use super::params::Pooling;
use crate::error::{Error, Result};
use crate::optim::LrSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Vicreg,
    Triplet,
    Contrastive,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Vicreg => "vicreg",
            LossKind::Triplet => "triplet",
            LossKind::Contrastive => "contrastive",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vicreg" => Ok(LossKind::Vicreg),
            "triplet" => Ok(LossKind::Triplet),
            "contrastive" => Ok(LossKind::Contrastive),
            other => Err(Error::Config(format!(
                "unknown loss {other:?}; expected vicreg, triplet or contrastive"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslConfig {
    pub loss_kind: LossKind,
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub eps_var: f64,
    pub eps_ln: f64,
    pub margin: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub pooling: Pooling,
    pub hidden: usize,
    pub dim: usize,
    pub token_cap: Option<usize>,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            loss_kind: LossKind::Vicreg,
            lambda: 25.0,
            mu: 25.0,
            nu: 1.0,
            gamma: 1.0,
            eps_var: 1e-4,
            eps_ln: 1e-5,
            margin: 0.2,
            temperature: 0.1,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            pooling: Pooling::Attention,
            hidden: 128,
            dim: 512,
            token_cap: Some(1024),
        }
    }
}

impl SslConfig {
    /// Defaults for `kind`, including its preferred batch size (8 for the triplet
    /// loss, 128 for the contrastive loss).
    pub fn for_loss(kind: LossKind) -> Self {
        let batch_size = match kind {
            LossKind::Vicreg => 32,
            LossKind::Triplet => 8,
            LossKind::Contrastive => 128,
        };
        SslConfig {
            loss_kind: kind,
            batch_size,
            ..SslConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        nonneg("lambda", self.lambda)?;
        nonneg("mu", self.mu)?;
        nonneg("nu", self.nu)?;
        positive("gamma", self.gamma)?;
        positive("eps_var", self.eps_var)?;
        nonneg("eps_ln", self.eps_ln)?;
        positive("margin", self.margin)?;
        positive("temperature", self.temperature)?;
        nonneg("learning_rate", self.learning_rate)?;
        nonneg("weight_decay", self.weight_decay)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.hidden == 0 || self.dim == 0 {
            return Err(Error::Config("hidden width and embedding dimension must be >= 1".into()));
        }
        if self.dim == 1 && self.eps_ln == 0.0 {
            return Err(Error::Config("dim = 1 requires eps_ln > 0".into()));
        }
        if self.token_cap == Some(0) {
            return Err(Error::Config("token cap must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value and its parts. For the triplet and contrastive losses only `total`
/// is meaningful and the VICReg parts are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

/// Loss for one batch and its gradient with respect to both views (each `B x d`).
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub parts: LossParts,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

fn check_batch(fa: &[f64], fb: &[f64], d: usize) -> Result<usize> {
    if d == 0 || fa.len() != fb.len() || !fa.len().is_multiple_of(d) {
        return Err(Error::Dimension(format!(
            "view batches of {} and {} values do not share rows of width {d}",
            fa.len(),
            fb.len()
        )));
    }
    let b = fa.len() / d;
    if b < 2 {
        return Err(Error::Invalid(format!("loss needs a batch of at least 2, got {b}")));
    }
    Ok(b)
}

pub fn ssl_loss(fa: &[f64], fb: &[f64], d: usize, cfg: &SslConfig) -> Result<LossParts> {
    Ok(ssl_loss_and_grad(fa, fb, d, cfg)?.parts)
}

pub fn ssl_loss_and_grad(fa: &[f64], fb: &[f64], d: usize, cfg: &SslConfig) -> Result<LossGrad> {
    let b = check_batch(fa, fb, d)?;
    Ok(match cfg.loss_kind {
        LossKind::Vicreg => vicreg(fa, fb, b, d, cfg),
        LossKind::Triplet => triplet(fa, fb, b, d, cfg.margin),
        LossKind::Contrastive => contrastive(fa, fb, b, d, cfg.temperature),
    })
}

fn vicreg(fa: &[f64], fb: &[f64], b: usize, d: usize, cfg: &SslConfig) -> LossGrad {
    let bd = (b * d) as f64;
    let mut invariance = 0.0;
    let mut grad_a = vec![0.0; b * d];
    let mut grad_b = vec![0.0; b * d];
    for i in 0..b * d {
        let diff = fa[i] - fb[i];
        invariance += diff * diff;
        grad_a[i] = cfg.lambda * 2.0 * diff / bd;
        grad_b[i] = -grad_a[i];
    }
    invariance /= bd;

    let (va, ca) = var_cov_term(fa, b, d, cfg, &mut grad_a);
    let (vb, cb) = var_cov_term(fb, b, d, cfg, &mut grad_b);
    let variance = 0.5 * (va + vb);
    let covariance = 0.5 * (ca + cb);
    LossGrad {
        parts: LossParts {
            total: cfg.lambda * invariance + cfg.mu * variance + cfg.nu * covariance,
            invariance,
            variance,
            covariance,
        },
        grad_a,
        grad_b,
    }
}

/// Variance and covariance terms of one view; adds their weighted gradient
/// (including the 1/2 view average) into `grad`.
fn var_cov_term(z: &[f64], b: usize, d: usize, cfg: &SslConfig, grad: &mut [f64]) -> (f64, f64) {
    let bf = b as f64;
    let mut mean = vec![0.0; d];
    for row in z.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= bf);
    let centered: Vec<f64> = z
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();

    let mut cov = vec![0.0; d * d];
    for row in centered.chunks_exact(d) {
        for j in 0..d {
            let x = row[j];
            if x == 0.0 {
                continue;
            }
            let c = &mut cov[j * d..(j + 1) * d];
            for k in 0..d {
                c[k] += x * row[k];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= bf - 1.0);

    let mut variance = 0.0;
    // d term / d Var_jj, already scaled by mu / 2
    let mut dvar = vec![0.0; d];
    for j in 0..d {
        let std = (cov[j * d + j] + cfg.eps_var).sqrt();
        let hinge = cfg.gamma - std;
        if hinge > 0.0 {
            variance += hinge;
            dvar[j] = -0.5 * cfg.mu / d as f64 * 0.5 / std;
        }
    }
    variance /= d as f64;

    let mut covariance = 0.0;
    for j in 0..d {
        for k in 0..d {
            if j != k {
                covariance += cov[j * d + k] * cov[j * d + k];
            }
        }
    }
    covariance /= d as f64;

    // d loss / d Cov_jk: diagonal from the variance hinge, off-diagonal from
    // nu/2 * (1/d) * sum Cov^2
    let scale = 0.5 * cfg.nu / d as f64 * 2.0;
    let mut dcov = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            dcov[j * d + k] = if j == k { dvar[j] } else { scale * cov[j * d + k] };
        }
    }
    // Cov = Xc^T Xc / (B-1) with symmetric dcov => dXc = 2 Xc dcov / (B-1);
    // centering is a projection that the column sums of dXc already respect.
    let f = 2.0 / (bf - 1.0);
    let mut dxc = vec![0.0; b * d];
    for (r, row) in centered.chunks_exact(d).enumerate() {
        let out = &mut dxc[r * d..(r + 1) * d];
        for j in 0..d {
            let x = row[j];
            if x == 0.0 {
                continue;
            }
            let dc = &dcov[j * d..(j + 1) * d];
            for k in 0..d {
                out[k] += f * x * dc[k];
            }
        }
    }
    let mut col = vec![0.0; d];
    for row in dxc.chunks_exact(d) {
        for (c, v) in col.iter_mut().zip(row) {
            *c += v;
        }
    }
    for (r, row) in dxc.chunks_exact(d).enumerate() {
        for k in 0..d {
            grad[r * d + k] += row[k] - col[k] / bf;
        }
    }
    (variance, covariance)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn add_dist_grad(a: &[f64], b: &[f64], dd: f64, ga: &mut [f64], gb: &mut [f64]) {
    let r = dist(a, b);
    if r <= 1e-12 {
        return;
    }
    for k in 0..a.len() {
        let g = dd * (a[k] - b[k]) / r;
        ga[k] += g;
        gb[k] -= g;
    }
}

fn triplet(fa: &[f64], fb: &[f64], b: usize, d: usize, margin: f64) -> LossGrad {
    let mut grad_a = vec![0.0; b * d];
    let mut grad_b = vec![0.0; b * d];
    let mut total = 0.0;
    let row = |m: &[f64], i: usize| m[i * d..(i + 1) * d].to_vec();
    for i in 0..b {
        let anchor = row(fa, i);
        let pos = row(fb, i);
        let dp = dist(&anchor, &pos);
        let (neg, dn) = (0..b)
            .filter(|&k| k != i)
            .map(|k| (k, dist(&anchor, &fb[k * d..(k + 1) * d])))
            .fold((usize::MAX, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let hinge = dp - dn + margin;
        if hinge > 0.0 {
            total += hinge;
            let w = 1.0 / b as f64;
            let mut ga = vec![0.0; d];
            let mut gp = vec![0.0; d];
            let mut gn = vec![0.0; d];
            add_dist_grad(&anchor, &pos, w, &mut ga, &mut gp);
            add_dist_grad(&anchor, &fb[neg * d..(neg + 1) * d], -w, &mut ga, &mut gn);
            for k in 0..d {
                grad_a[i * d + k] += ga[k];
                grad_b[i * d + k] += gp[k];
                grad_b[neg * d + k] += gn[k];
            }
        }
    }
    LossGrad {
        parts: LossParts {
            total: total / b as f64,
            ..LossParts::default()
        },
        grad_a,
        grad_b,
    }
}

/// Rows scaled to unit length, plus the original norms.
fn normalize_rows(m: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = m.to_vec();
    let mut norms = Vec::with_capacity(m.len() / d);
    for row in out.chunks_exact_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

fn normalize_backward(u: &[f64], norms: &[f64], du: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for (r, n) in norms.iter().enumerate() {
        let ur = &u[r * d..(r + 1) * d];
        let dr = &du[r * d..(r + 1) * d];
        let dot: f64 = ur.iter().zip(dr).map(|(a, b)| a * b).sum();
        for k in 0..d {
            out[r * d + k] = (dr[k] - ur[k] * dot) / n;
        }
    }
    out
}

fn contrastive(fa: &[f64], fb: &[f64], b: usize, d: usize, temperature: f64) -> LossGrad {
    let (ua, na) = normalize_rows(fa, d);
    let (ub, nb) = normalize_rows(fb, d);
    let mut logits = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            let dot: f64 = ua[i * d..(i + 1) * d].iter().zip(&ub[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
            logits[i * b + j] = dot / temperature;
        }
    }
    // d loss / d logits, for 1/2 (row-wise CE + column-wise CE) averaged over B
    let mut dlog = vec![0.0; b * b];
    let mut total = 0.0;
    let w = 0.5 / b as f64;
    for i in 0..b {
        let row: Vec<f64> = (0..b).map(|j| logits[i * b + j]).collect();
        total += softmax_ce(&row, i, w, |j, g| dlog[i * b + j] += g);
        let col: Vec<f64> = (0..b).map(|j| logits[j * b + i]).collect();
        total += softmax_ce(&col, i, w, |j, g| dlog[j * b + i] += g);
    }
    let mut dua = vec![0.0; b * d];
    let mut dub = vec![0.0; b * d];
    for i in 0..b {
        for j in 0..b {
            let g = dlog[i * b + j] / temperature;
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                dua[i * d + k] += g * ub[j * d + k];
                dub[j * d + k] += g * ua[i * d + k];
            }
        }
    }
    LossGrad {
        parts: LossParts {
            total,
            ..LossParts::default()
        },
        grad_a: normalize_backward(&ua, &na, &dua, d),
        grad_b: normalize_backward(&ub, &nb, &dub, d),
    }
}

/// `w * (-log softmax(logits)[target])`, emitting `w * (softmax - onehot)`.
fn softmax_ce(logits: &[f64], target: usize, w: f64, mut emit: impl FnMut(usize, f64)) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    for (j, &l) in logits.iter().enumerate() {
        let p = (l - log_z).exp();
        emit(j, w * (p - if j == target { 1.0 } else { 0.0 }));
    }
    w * (log_z - logits[target])
}
