use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Gradients, ParamId, ParamStore, Real};

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    z.sigmoid()
}

/// `z * sigmoid(z)`.
#[inline]
pub fn silu<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

#[inline]
pub fn silu_grad<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

/// Elementwise SiLU of `z` together with its derivative, sharing one
/// exponential per entry.
pub fn silu_with_grad<T: Real>(z: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let mut act = z.as_standard_layout().into_owned();
    let mut grad = Array2::zeros(z.raw_dim());
    let a = act.as_slice_mut().expect("standard layout");
    let g = grad.as_slice_mut().expect("fresh array");
    for (a, g) in a.iter_mut().zip(g.iter_mut()) {
        let v = *a;
        let s = sigmoid(v);
        *a = v * s;
        *g = s * (T::one() + v * (T::one() - s));
    }
    (act, grad)
}

/// Affine map applied to a batch of row vectors: `y = x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Glorot-uniform weights scaled by `gain`, zero bias.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), in_dim, out_dim, bound, rng);
        let bias = store.zeros(format!("{name}.bias"), 1, out_dim);
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: ArrayView2<'_, T>) -> Array2<T> {
        let w = store.view2(self.weight);
        let bias = store.slice(self.bias);
        let mut y = Array2::from_shape_vec(
            (x.nrows(), w.ncols()),
            bias.iter().copied().cycle().take(x.nrows() * bias.len()).collect(),
        )
        .expect("bias rows");
        general_mat_mul(T::one(), &x, &w, T::one(), &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx` when requested.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: ArrayView2<'_, T>,
        grad_out: ArrayView2<'_, T>,
        grads: &mut Gradients<T>,
        input_grad: bool,
    ) -> Option<Array2<T>> {
        general_mat_mul(
            T::one(),
            &x.t(),
            &grad_out,
            T::one(),
            &mut grads.view2_mut(self.weight),
        );
        let mut gb = grads.view1_mut(self.bias);
        gb += &grad_out.sum_axis(Axis(0));
        input_grad.then(|| grad_out.dot(&store.view2(self.weight).t()))
    }
}

/// Stack of [`Linear`] layers with SiLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// Input of every layer.
    inputs: Vec<Array2<T>>,
    /// Activation derivative of every hidden layer.
    dact: Vec<Array2<T>>,
}

impl Mlp {
    /// `dims` lists every width from input to output, so `dims.len() - 1`
    /// layers are created. The last layer uses `last_gain`.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        last_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs an input and an output width");
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 1 == n { last_gain } else { 1.0 };
                Linear::new(store, &format!("{name}.{i}"), w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: Array2<T>) -> (Array2<T>, MlpCache<T>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut dact = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(store, cur.view());
            inputs.push(cur);
            if i + 1 == self.layers.len() {
                return (z, MlpCache { inputs, dact });
            }
            let (a, d) = silu_with_grad(&z);
            cur = a;
            dact.push(d);
        }
        unreachable!("MLP has at least one layer")
    }

    /// Inference without keeping intermediates.
    pub fn eval<T: Real>(&self, store: &ParamStore<T>, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut cur = self.layers[0].forward(store, x);
        for layer in &self.layers[1..] {
            cur.mapv_inplace(silu);
            cur = layer.forward(store, cur.view());
        }
        cur
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &MlpCache<T>,
        grad_out: Array2<T>,
        grads: &mut Gradients<T>,
        input_grad: bool,
    ) -> Option<Array2<T>> {
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let want = i > 0 || input_grad;
            let gx = self.layers[i].backward(store, cache.inputs[i].view(), g.view(), grads, want);
            if i == 0 {
                return gx;
            }
            let mut gx = gx.expect("hidden gradient requested");
            gx *= &cache.dact[i - 1];
            g = gx;
        }
        unreachable!("MLP has at least one layer")
    }
}
