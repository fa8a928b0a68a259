use ndarray::Array2;
use rand::Rng;

use super::{Gradients, Linear, ParamStore, Real};

/// Dense feature map stored as `(height * width) x channels`, pixels in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub data: Array2<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(height: usize, width: usize, data: Array2<T>) -> Self {
        assert_eq!(data.nrows(), height * width, "feature map rows");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, Array2::zeros((height * width, channels)))
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn at(&self, row: usize, col: usize) -> ndarray::ArrayView1<'_, T> {
        self.data.row(row * self.width + col)
    }
}

/// 3x3 convolution with "same" zero padding and configurable dilation,
/// lowered to a matrix product over an im2col buffer.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    inner: Linear,
    dilation: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Array2<T>,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(dilation >= 1);
        // He-style bound on fan-in keeps activations from shrinking through
        // the stack of convolutions.
        let fan_in = 9 * in_channels;
        let bound = (3.0 / fan_in as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), fan_in, out_channels, bound, rng);
        let bias = store.zeros(format!("{name}.bias"), 1, out_channels);
        Self {
            inner: Linear { weight, bias },
            dilation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.inner.in_dim() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.inner.out_dim()
    }

    fn im2col<T: Real>(&self, input: &FeatureMap<T>) -> Array2<T> {
        let (h, w, c) = (input.height, input.width, input.channels());
        let d = self.dilation as isize;
        let src = input.data.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((h * w, 9 * c));
        let dst = cols.as_slice_mut().expect("fresh array");
        for y in 0..h {
            for x in 0..w {
                let row = (y * w + x) * 9 * c;
                for ky in 0..3 {
                    let sy = y as isize + (ky as isize - 1) * d;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + (kx as isize - 1) * d;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let from = (sy as usize * w + sx as usize) * c;
                        let to = row + (ky * 3 + kx) * c;
                        dst[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, height: usize, width: usize, cols: &Array2<T>) -> Array2<T> {
        let c = self.in_channels();
        let d = self.dilation as isize;
        let src = cols.as_slice().expect("standard layout");
        let mut out = Array2::zeros((height * width, c));
        let dst = out.as_slice_mut().expect("fresh array");
        for y in 0..height {
            for x in 0..width {
                let row = (y * width + x) * 9 * c;
                for ky in 0..3 {
                    let sy = y as isize + (ky as isize - 1) * d;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + (kx as isize - 1) * d;
                        if sx < 0 || sx >= width as isize {
                            continue;
                        }
                        let to = (sy as usize * width + sx as usize) * c;
                        let from = row + (ky * 3 + kx) * c;
                        for (a, &b) in dst[to..to + c].iter_mut().zip(&src[from..from + c]) {
                            *a += b;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        input: &FeatureMap<T>,
    ) -> (FeatureMap<T>, ConvCache<T>) {
        assert_eq!(input.channels(), self.in_channels(), "conv input channels");
        let cols = self.im2col(input);
        let out = self.inner.forward(store, cols.view());
        (
            FeatureMap::new(input.height, input.width, out),
            ConvCache { cols },
        )
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &ConvCache<T>,
        height: usize,
        width: usize,
        grad_out: &Array2<T>,
        grads: &mut Gradients<T>,
        input_grad: bool,
    ) -> Option<Array2<T>> {
        let gcols = self
            .inner
            .backward(store, cache.cols.view(), grad_out.view(), grads, input_grad)?;
        Some(self.col2im(height, width, &gcols))
    }
}

/// 2x2 average pooling with stride 2. Height and width must be even.
pub fn avg_pool2<T: Real>(input: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w, c) = (input.height, input.width, input.channels());
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dimensions");
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let src = input.data.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut out = FeatureMap::zeros(oh, ow, c);
    let dst = out.data.as_slice_mut().expect("fresh array");
    for y in 0..oh {
        for x in 0..ow {
            let o = (y * ow + x) * c;
            let i0 = ((2 * y) * w + 2 * x) * c;
            let i1 = i0 + w * c;
            for k in 0..c {
                dst[o + k] = quarter * (src[i0 + k] + src[i0 + c + k] + src[i1 + k] + src[i1 + c + k]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(height: usize, width: usize, grad_out: &Array2<T>) -> Array2<T> {
    let (oh, ow) = (height / 2, width / 2);
    let c = grad_out.ncols();
    let quarter = T::of(0.25);
    let g = grad_out.as_standard_layout();
    let g = g.as_slice().expect("standard layout");
    let mut out = Array2::zeros((height * width, c));
    let dst = out.as_slice_mut().expect("fresh array");
    for y in 0..oh {
        for x in 0..ow {
            let o = (y * ow + x) * c;
            let i0 = ((2 * y) * width + 2 * x) * c;
            let i1 = i0 + width * c;
            for k in 0..c {
                let v = quarter * g[o + k];
                dst[i0 + k] = v;
                dst[i0 + c + k] = v;
                dst[i1 + k] = v;
                dst[i1 + c + k] = v;
            }
        }
    }
    out
}
