use crate::error::{Error, Result};
use crate::real::Real;

/// Optimizer selection. The paper names no optimizer; Adam is the default
/// for acceptance runs, plain SGD is kept for determinism studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::adam_default(),
            lr: 1e-3,
        }
    }
}

/// In-place parameter updater holding per-tensor moment state.
pub struct Optimizer<T: Real> {
    config: OptimizerConfig,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, param_sizes: &[usize]) -> Result<Self> {
        if config.lr <= 0.0 {
            return Err(Error::parameter(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        let (m, v) = match config.kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (
                param_sizes.iter().map(|&s| vec![T::ZERO; s]).collect(),
                param_sizes.iter().map(|&s| vec![T::ZERO; s]).collect(),
            ),
        };
        Ok(Optimizer {
            config,
            step_count: 0,
            m,
            v,
        })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// Apply one update. `params[i]` and `grads[i]` must be the same length
    /// across all calls.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len());
        self.step_count += 1;
        let lr = T::from_f64(self.config.lr);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &gv) in p.iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let b1 = T::from_f64(beta1);
                let b2 = T::from_f64(beta2);
                let eps = T::from_f64(eps);
                let one = T::ONE;
                let bc1 = T::from_f64(1.0 - beta1.powi(self.step_count as i32));
                let bc2 = T::from_f64(1.0 - beta2.powi(self.step_count as i32));
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for i in 0..g.len() {
                        let gv = g[i];
                        m[i] = b1 * m[i] + (one - b1) * gv;
                        v[i] = b2 * v[i] + (one - b2) * gv * gv;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_lr() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.0,
        };
        assert!(Optimizer::<f64>::new(cfg, &[1]).is_err());
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: -0.1,
        };
        assert!(Optimizer::<f64>::new(cfg, &[1]).is_err());
    }

    #[test]
    fn sgd_basic_step() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
        };
        let mut opt = Optimizer::<f64>::new(cfg, &[1]).unwrap();
        let mut w = vec![1.0];
        opt.step(&mut [&mut w], &[vec![2.0]]);
        assert!((w[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_weights_unchanged() {
        let sgd = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
        };
        let mut opt = Optimizer::<f64>::new(sgd, &[2]).unwrap();
        let mut w = vec![1.0, -2.0];
        opt.step(&mut [&mut w], &[vec![0.0, 0.0]]);
        assert_eq!(w, vec![1.0, -2.0]);

        let adam = OptimizerConfig {
            kind: OptimizerKind::adam_default(),
            lr: 0.1,
        };
        let mut opt = Optimizer::<f64>::new(adam, &[2]).unwrap();
        let mut w = vec![1.0, -2.0];
        opt.step(&mut [&mut w], &[vec![0.0, 0.0]]);
        assert_eq!(w, vec![1.0, -2.0], "Adam with zero grad history is a no-op");
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // With constant gradient c, bias-corrected m̂ = c and v̂ = c², so the
        // first update is lr·c/(|c| + ε) ≈ lr·sign(c).
        let cfg = OptimizerConfig {
            kind: OptimizerKind::adam_default(),
            lr: 1e-3,
        };
        let mut opt = Optimizer::<f64>::new(cfg, &[2]).unwrap();
        let mut w = vec![0.5, 0.5];
        opt.step(&mut [&mut w], &[vec![3.0, -0.02]]);
        assert!((w[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (0.5 + 1e-3)).abs() < 1e-9);
    }
}
