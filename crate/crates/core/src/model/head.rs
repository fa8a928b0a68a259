use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::nn::{Gradients, Mlp, MlpCache, ParamStore, Real};

/// Lower/upper bound applied to every confidence before it reaches a log.
pub const CONFIDENCE_EPS: f64 = 1e-6;

/// Logistic squashing, clamped to `[eps, 1 - eps]`.
#[inline]
pub fn confidence_from_logit(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS)
}

/// `d confidence / d logit`; zero where the clamp is active.
#[inline]
pub fn confidence_grad(c: f64) -> f64 {
    if c <= CONFIDENCE_EPS || c >= 1.0 - CONFIDENCE_EPS {
        0.0
    } else {
        c * (1.0 - c)
    }
}

/// Shared MLP mapping a feature vector to `[logit, dx, dy]`. Used for grid
/// proposals and auxiliary points alike.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    mlp: Mlp,
}

impl PredictionHead {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        in_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(3);
        // Small last layer: proposals start close to their anchors.
        Self {
            mlp: Mlp::new(store, "head", &dims, 0.1, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, features: Array2<T>) -> (Array2<T>, MlpCache<T>) {
        self.mlp.forward(store, features)
    }

    pub fn eval<T: Real>(&self, store: &ParamStore<T>, features: ArrayView2<'_, T>) -> Array2<T> {
        self.mlp.eval(store, features)
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &MlpCache<T>,
        grad_out: Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        self.mlp
            .backward(store, cache, grad_out, grads, true)
            .expect("input gradient requested")
    }
}
