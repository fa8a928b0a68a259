use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter type.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Per-parameter learning rate, when some group differs from `config.lr`.
    lr: Option<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            lr: None,
            step: 0,
        }
    }

    /// Uses `lr` for the flat parameter range `range` instead of the
    /// configured rate.
    pub fn set_lr(&mut self, range: std::ops::Range<usize>, lr: f64) {
        let n = self.m.len();
        let base = self.config.lr;
        self.lr.get_or_insert_with(|| vec![base; n])[range].fill(lr);
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        let AdamConfig {
            lr: base_lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (((p, g), m), v)) in params
            .data_mut()
            .iter_mut()
            .zip(grads.data())
            .zip(&mut self.m)
            .zip(&mut self.v)
            .enumerate()
        {
            let lr = self.lr.as_ref().map_or(base_lr, |l| l[k]);
            let g = g.f64();
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            *p = T::of(p.f64() - update);
        }
    }
}
