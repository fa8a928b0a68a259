//! Continuous feature lookup on a latent lattice.
//!
//! Lattice node `(row, col)` of a stride-`s` grid sits at pixel
//! `((col + 0.5) s, (row + 0.5) s)`. A query is mapped to grid coordinates
//! `u = x / s - 0.5`, `v = y / s - 0.5`, clamped into the lattice hull, and
//! blended from its four surrounding nodes. Each node contributes with the
//! area of the rectangle spanned by the query and the diagonally opposite
//! node, normalized by the total area. In the implicit variants each node
//! feature first goes through a small MLP together with the signed offset
//! from the node to the query and its Fourier encoding.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FeatureMap, Gradients, Mlp, MlpCache, ParamStore, Real};
use crate::scene::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfiVariant {
    /// Closest node feature, no transform.
    Nearest,
    /// Area-weighted blend of raw node features.
    Bilinear,
    /// MLP on the closest node only.
    IfiSingleRef,
    /// Area-weighted MLP outputs without the Fourier features.
    IfiNoPe,
    /// Area-weighted MLP outputs on node feature, offset and its encoding.
    Ifi,
}

impl IfiVariant {
    pub const ALL: [IfiVariant; 5] = [
        IfiVariant::Nearest,
        IfiVariant::Bilinear,
        IfiVariant::IfiSingleRef,
        IfiVariant::IfiNoPe,
        IfiVariant::Ifi,
    ];

    pub fn uses_transform(self) -> bool {
        matches!(self, Self::IfiSingleRef | Self::IfiNoPe | Self::Ifi)
    }

    pub fn uses_encoding(self) -> bool {
        matches!(self, Self::IfiSingleRef | Self::Ifi)
    }

    pub fn single_node(self) -> bool {
        matches!(self, Self::Nearest | Self::IfiSingleRef)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
            Self::IfiSingleRef => "ifi_single_ref",
            Self::IfiNoPe => "ifi_no_pe",
            Self::Ifi => "ifi",
        }
    }
}

impl std::str::FromStr for IfiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown IFI variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionalEncoding {
    pub n_freqs: usize,
    pub base: f64,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        Self {
            n_freqs: 8,
            base: 2.0,
        }
    }
}

impl PositionalEncoding {
    /// Output width for a `d`-dimensional input.
    pub fn dim(&self, d: usize) -> usize {
        2 * self.n_freqs * d
    }

    /// Appends `sin(base^k pi t), cos(base^k pi t)` for every component `t`
    /// and `k = 0..n_freqs`.
    pub fn encode_into(&self, v: &[f64], out: &mut Vec<f64>) {
        for &t in v {
            if self.base == 2.0 {
                // Angle doubling: one sin_cos per component.
                let (mut s, mut c) = (std::f64::consts::PI * t).sin_cos();
                for _ in 0..self.n_freqs {
                    out.push(s);
                    out.push(c);
                    (s, c) = (2.0 * s * c, (c - s) * (c + s));
                }
            } else {
                let mut freq = std::f64::consts::PI;
                for _ in 0..self.n_freqs {
                    let (s, c) = (freq * t).sin_cos();
                    out.push(s);
                    out.push(c);
                    freq *= self.base;
                }
            }
        }
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(v.len()));
        self.encode_into(v, &mut out);
        out
    }
}

/// Geometry of a feature lattice in image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

/// One lattice node taking part in a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: usize,
    pub weight: f64,
    /// Signed offset from the node to the query, in cell units.
    pub delta: [f64; 2],
}

impl Lattice {
    pub fn new(height: usize, width: usize, stride: usize) -> Self {
        Self {
            height,
            width,
            stride,
        }
    }

    fn check_domain(&self, p: Point) -> Result<()> {
        let (w, h) = (
            (self.width * self.stride) as f64,
            (self.height * self.stride) as f64,
        );
        if p.x.is_finite() && p.y.is_finite() && (0.0..=w).contains(&p.x) && (0.0..=h).contains(&p.y) {
            Ok(())
        } else {
            Err(Error::Domain {
                x: p.x,
                y: p.y,
                width: w,
                height: h,
            })
        }
    }

    /// Clamped continuous grid coordinates `(u, v)`.
    pub fn grid_coords(&self, p: Point) -> (f64, f64) {
        let s = self.stride as f64;
        let u = (p.x / s - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (p.y / s - 0.5).clamp(0.0, (self.height - 1) as f64);
        (u, v)
    }

    /// The four surrounding nodes with normalized area weights.
    pub fn neighbors(&self, p: Point) -> Result<[Neighbor; 4]> {
        self.check_domain(p)?;
        if self.height < 2 || self.width < 2 {
            return Err(Error::Shape(format!(
                "interpolation needs a lattice of at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        let (u, v) = self.grid_coords(p);
        let c0 = (u.floor() as usize).min(self.width - 2);
        let r0 = (v.floor() as usize).min(self.height - 2);
        let corners = [(r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)];
        let mut out = [Neighbor {
            node: 0,
            weight: 0.0,
            delta: [0.0; 2],
        }; 4];
        let mut total = 0.0;
        for (i, &(r, c)) in corners.iter().enumerate() {
            // Diagonally opposite corner of the same cell.
            let (or, oc) = corners[3 - i];
            let area = (u - oc as f64).abs() * (v - or as f64).abs();
            total += area;
            out[i] = Neighbor {
                node: r * self.width + c,
                weight: area,
                delta: [u - c as f64, v - r as f64],
            };
        }
        for n in &mut out {
            n.weight /= total;
        }
        Ok(out)
    }

    pub fn nearest(&self, p: Point) -> Result<Neighbor> {
        self.check_domain(p)?;
        let (u, v) = self.grid_coords(p);
        let c = ((u + 0.5).floor() as usize).min(self.width - 1);
        let r = ((v + 0.5).floor() as usize).min(self.height - 1);
        Ok(Neighbor {
            node: r * self.width + c,
            weight: 1.0,
            delta: [u - c as f64, v - r as f64],
        })
    }
}

/// `dst[row_d] += a * src[row_s]` on row-major buffers of equal width.
#[inline]
fn axpy<T: Real>(dst: &mut [T], row_d: usize, src: &[T], row_s: usize, width: usize, a: T) {
    let d = &mut dst[row_d * width..(row_d + 1) * width];
    for (d, &v) in d.iter_mut().zip(&src[row_s * width..(row_s + 1) * width]) {
        *d += a * v;
    }
}

/// Flattened list of `(query, node, weight, delta)` contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub n_queries: usize,
    pub entries: Vec<(usize, Neighbor)>,
}

#[derive(Debug, Clone)]
pub struct Interpolator {
    variant: IfiVariant,
    encoding: PositionalEncoding,
    channels: usize,
    transform: Option<Mlp>,
}

#[derive(Debug, Clone)]
pub struct IfiCache<T> {
    mlp: Option<MlpCache<T>>,
}

impl Interpolator {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        variant: IfiVariant,
        channels: usize,
        hidden: usize,
        out: usize,
        encoding: PositionalEncoding,
        rng: &mut R,
    ) -> Self {
        let transform = variant.uses_transform().then(|| {
            let mut in_dim = channels + 2;
            if variant.uses_encoding() {
                in_dim += encoding.dim(2);
            }
            Mlp::new(store, name, &[in_dim, hidden, out], 1.0, rng)
        });
        Self {
            variant,
            encoding,
            channels,
            transform,
        }
    }

    pub fn variant(&self) -> IfiVariant {
        self.variant
    }

    pub fn out_dim(&self) -> usize {
        self.transform
            .as_ref()
            .map_or(self.channels, |mlp| mlp.out_dim())
    }

    pub fn plan(&self, lattice: &Lattice, queries: &[Point]) -> Result<QueryPlan> {
        let per = if self.variant.single_node() { 1 } else { 4 };
        let mut entries = Vec::with_capacity(queries.len() * per);
        for (q, &p) in queries.iter().enumerate() {
            if self.variant.single_node() {
                entries.push((q, lattice.nearest(p)?));
            } else {
                entries.extend(lattice.neighbors(p)?.into_iter().map(|n| (q, n)));
            }
        }
        Ok(QueryPlan {
            n_queries: queries.len(),
            entries,
        })
    }

    fn transform_input<T: Real>(&self, grid: &FeatureMap<T>, plan: &QueryPlan, in_dim: usize) -> Array2<T> {
        let c = self.channels;
        let src = grid.data.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut x = Array2::zeros((plan.entries.len(), in_dim));
        let dst = x.as_slice_mut().expect("fresh array");
        let mut enc = Vec::with_capacity(self.encoding.dim(2));
        for (row, (_, n)) in dst.chunks_exact_mut(in_dim).zip(&plan.entries) {
            row[..c].copy_from_slice(&src[n.node * c..(n.node + 1) * c]);
            row[c] = T::of(n.delta[0]);
            row[c + 1] = T::of(n.delta[1]);
            if self.variant.uses_encoding() {
                enc.clear();
                self.encoding.encode_into(&n.delta, &mut enc);
                for (d, &v) in row[c + 2..].iter_mut().zip(&enc) {
                    *d = T::of(v);
                }
            }
        }
        x
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        grid: &FeatureMap<T>,
        plan: &QueryPlan,
    ) -> Result<(Array2<T>, IfiCache<T>)> {
        if grid.channels() != self.channels {
            return Err(Error::Shape(format!(
                "interpolator expects {} channels, grid has {}",
                self.channels,
                grid.channels()
            )));
        }
        let width = self.out_dim();
        let mut out = Array2::zeros((plan.n_queries, width));
        let dst = out.as_slice_mut().expect("fresh array");
        match &self.transform {
            None => {
                let src = grid.data.as_standard_layout();
                let src = src.as_slice().expect("standard layout");
                for &(q, n) in &plan.entries {
                    axpy(dst, q, src, n.node, width, T::of(n.weight));
                }
                Ok((out, IfiCache { mlp: None }))
            }
            Some(mlp) => {
                let x = self.transform_input(grid, plan, mlp.in_dim());
                let (y, cache) = mlp.forward(store, x);
                let src = y.as_slice().expect("standard layout");
                for (e, &(q, n)) in plan.entries.iter().enumerate() {
                    axpy(dst, q, src, e, width, T::of(n.weight));
                }
                Ok((out, IfiCache { mlp: Some(cache) }))
            }
        }
    }

    /// Returns the gradient with respect to the lattice features.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        grid: &FeatureMap<T>,
        plan: &QueryPlan,
        cache: &IfiCache<T>,
        grad_out: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        let c = self.channels;
        let mut grid_grad = Array2::zeros(grid.data.raw_dim());
        let dst = grid_grad.as_slice_mut().expect("fresh array");
        let g = grad_out.as_standard_layout();
        let g = g.as_slice().expect("standard layout");
        match (&self.transform, &cache.mlp) {
            (Some(mlp), Some(mc)) => {
                let width = mlp.out_dim();
                let mut gy = Array2::zeros((plan.entries.len(), width));
                let gys = gy.as_slice_mut().expect("fresh array");
                for (e, &(q, n)) in plan.entries.iter().enumerate() {
                    axpy(gys, e, g, q, width, T::of(n.weight));
                }
                let gx = mlp
                    .backward(store, mc, gy, grads, true)
                    .expect("input gradient requested");
                let in_dim = gx.ncols();
                let gx = gx.as_slice().expect("standard layout");
                for (e, &(_, n)) in plan.entries.iter().enumerate() {
                    let src = &gx[e * in_dim..e * in_dim + c];
                    for (d, &v) in dst[n.node * c..(n.node + 1) * c].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            _ => {
                for &(q, n) in &plan.entries {
                    axpy(dst, n.node, g, q, c, T::of(n.weight));
                }
            }
        }
        grid_grad
    }

    /// Single-point lookup.
    pub fn query<T: Real>(
        &self,
        store: &ParamStore<T>,
        grid: &FeatureMap<T>,
        stride: usize,
        p: Point,
    ) -> Result<Vec<T>> {
        let lattice = Lattice::new(grid.height, grid.width, stride);
        let plan = self.plan(&lattice, &[p])?;
        let (out, _) = self.forward(store, grid, &plan)?;
        Ok(out.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lattice() -> Lattice {
        Lattice::new(4, 5, 8)
    }

    #[test]
    fn cell_center_query_has_equal_weights() {
        // Midpoint between nodes (1,1), (1,2), (2,1), (2,2).
        let p = Point::new(2.0 * 8.0, 2.0 * 8.0);
        let ns = lattice().neighbors(p).unwrap();
        for n in ns {
            assert!((n.weight - 0.25).abs() < 1e-15);
            assert!(n.delta.iter().all(|d| (d.abs() - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn node_query_puts_all_weight_on_the_node() {
        let l = lattice();
        for row in 0..l.height {
            for col in 0..l.width {
                let p = Point::new((col as f64 + 0.5) * 8.0, (row as f64 + 0.5) * 8.0);
                let ns = l.neighbors(p).unwrap();
                let hit: Vec<_> = ns.iter().filter(|n| n.weight > 0.0).collect();
                assert_eq!(hit.len(), 1);
                assert_eq!(hit[0].node, row * l.width + col);
                assert_eq!(hit[0].weight, 1.0);
                assert_eq!(hit[0].delta, [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn weights_match_bilinear_formula() {
        let l = lattice();
        let p = Point::new(13.0, 21.0);
        let (u, v) = l.grid_coords(p);
        let (fu, fv) = (u - u.floor(), v - v.floor());
        let w: Vec<f64> = l.neighbors(p).unwrap().iter().map(|n| n.weight).collect();
        let expected = [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn border_queries_clamp_into_hull() {
        let l = lattice();
        let corner = l.neighbors(Point::new(0.0, 0.0)).unwrap();
        assert_eq!(corner[0].node, 0);
        assert_eq!(corner[0].weight, 1.0);
        let far = l.neighbors(Point::new(40.0, 32.0)).unwrap();
        assert!(far.iter().any(|n| n.node == 4 * 5 - 1 && n.weight == 1.0));
    }

    #[test]
    fn outside_queries_are_domain_errors() {
        let l = lattice();
        assert!(matches!(l.neighbors(Point::new(-0.1, 3.0)), Err(Error::Domain { .. })));
        assert!(matches!(l.nearest(Point::new(3.0, 32.5)), Err(Error::Domain { .. })));
        let tiny = Lattice::new(1, 4, 8);
        assert!(matches!(tiny.neighbors(Point::new(1.0, 1.0)), Err(Error::Shape(_))));
        assert!(tiny.nearest(Point::new(1.0, 1.0)).is_ok());
    }

    #[test]
    fn encoding_layout() {
        let pe = PositionalEncoding { n_freqs: 2, base: 2.0 };
        let e = pe.encode(&[0.5, 0.0]);
        assert_eq!(e.len(), pe.dim(2));
        let pi = std::f64::consts::PI;
        assert!((e[0] - (0.5 * pi).sin()).abs() < 1e-15);
        assert!((e[3] - (pi).cos()).abs() < 1e-15);
        assert_eq!(&e[4..], &[0.0, 1.0, 0.0, 1.0]);
        assert!(PositionalEncoding { n_freqs: 0, base: 2.0 }.encode(&[1.0, 2.0]).is_empty());
    }

    #[test]
    fn doubling_matches_direct_evaluation() {
        let pe = PositionalEncoding::default();
        let pi = std::f64::consts::PI;
        for t in [-1.0, -0.73, -0.2, 0.0, 0.31, 0.5, 0.999] {
            let e = pe.encode(&[t]);
            for k in 0..pe.n_freqs {
                let a = 2f64.powi(k as i32) * pi * t;
                assert!((e[2 * k] - a.sin()).abs() < 1e-12, "t={t} k={k}");
                assert!((e[2 * k + 1] - a.cos()).abs() < 1e-12, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn output_dims_per_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for variant in IfiVariant::ALL {
            let mut store = ParamStore::<f64>::new();
            let ifi = Interpolator::new(&mut store, "i", variant, 6, 8, 5, PositionalEncoding::default(), &mut rng);
            let expected = if variant.uses_transform() { 5 } else { 6 };
            assert_eq!(ifi.out_dim(), expected, "{variant:?}");
            assert_eq!(variant.name().parse::<IfiVariant>().unwrap(), variant);
        }
    }
}
