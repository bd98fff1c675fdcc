//! Adam over a flat parameter vector, with optional AMSGrad and decoupled weight decay.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub amsgrad: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            amsgrad: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            v_max: if cfg.amsgrad { vec![0.0; n_params] } else { Vec::new() },
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`. Weight decay is applied to the
    /// parameters directly (`p -= lr * wd * p`), not folded into the gradient.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            amsgrad,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2_sqrt = (1.0 - beta2.powi(self.t as i32)).sqrt();
        let step_size = lr / bc1;
        for i in 0..params.len() {
            let g = grads[i];
            if weight_decay != 0.0 {
                params[i] -= lr * weight_decay * params[i];
            }
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let second = if amsgrad {
                self.v_max[i] = self.v_max[i].max(self.v[i]);
                self.v_max[i]
            } else {
                self.v[i]
            };
            let denom = second.sqrt() / bc2_sqrt + eps;
            params[i] -= step_size * self.m[i] / denom;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

impl LrSchedule {
    /// Learning rate for `step` out of `total` steps (0-based).
    pub fn at(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(LrSchedule::Cosine),
            "constant" => Ok(LrSchedule::Constant),
            other => Err(crate::Error::Config(format!("unknown lr schedule {other:?} (cosine|constant)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first Adam step is lr * sign(g) (up to eps)
        let mut opt = Adam::new(2, AdamConfig::default());
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.01], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn minimizes_quadratic() {
        for amsgrad in [false, true] {
            let mut opt = Adam::new(
                3,
                AdamConfig {
                    amsgrad,
                    ..AdamConfig::default()
                },
            );
            let target = [1.0, -2.0, 0.5];
            let mut p = vec![0.0; 3];
            for _ in 0..3000 {
                let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
                opt.step(&mut p, &g, 0.01);
            }
            for (x, t) in p.iter().zip(&target) {
                assert!((x - t).abs() < 1e-3, "{x} vs {t}");
            }
        }
    }

    #[test]
    fn amsgrad_keeps_running_max() {
        let cfg = AdamConfig {
            amsgrad: true,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(1, cfg);
        let mut p = vec![0.0];
        opt.step(&mut p, &[10.0], 0.1);
        let peak = opt.v_max[0];
        opt.step(&mut p, &[0.0], 0.1);
        assert_eq!(opt.v_max[0], peak);
        assert!(opt.v[0] < peak);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_without_gradient() {
        let mut opt = Adam::new(
            1,
            AdamConfig {
                weight_decay: 0.5,
                ..AdamConfig::default()
            },
        );
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0], 0.1);
        assert!((p[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Cosine.at(1.0, 0, 10), 1.0);
        assert!((LrSchedule::Cosine.at(1.0, 5, 10) - 0.5).abs() < 1e-12);
        assert!(LrSchedule::Cosine.at(1.0, 10, 10).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.at(0.3, 7, 10), 0.3);
    }
}
