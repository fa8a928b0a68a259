use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    avg_pool2, avg_pool2_backward, silu_with_grad, Conv2d, ConvCache, FeatureMap, Gradients, Linear,
    ParamStore, Real,
};
use crate::scene::Image;

const DILATION_RATES: [usize; 3] = [1, 2, 3];

/// Three parallel dilated 3x3 branches, concatenated, projected back to the
/// input width and added residually. Stands in for a full ASPP.
#[derive(Debug, Clone)]
struct DilatedBlock {
    branches: Vec<Conv2d>,
    project: Linear,
}

#[derive(Debug, Clone)]
struct DilatedCache<T> {
    branch: Vec<(ConvCache<T>, Array2<T>)>,
    concat: Array2<T>,
    /// SiLU derivative at the projection output.
    dproj: Array2<T>,
}

impl DilatedBlock {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut R) -> Self {
        let branches = DILATION_RATES
            .iter()
            .map(|&r| Conv2d::new(store, &format!("{name}.dil{r}"), channels, channels, r, rng))
            .collect();
        let project = Linear::new(store, &format!("{name}.project"), 3 * channels, channels, 0.5, rng);
        Self { branches, project }
    }

    fn forward<T: Real>(&self, store: &ParamStore<T>, x: &FeatureMap<T>) -> (FeatureMap<T>, DilatedCache<T>) {
        let mut branch = Vec::with_capacity(self.branches.len());
        let mut acts = Vec::with_capacity(self.branches.len());
        for conv in &self.branches {
            let (a, cache) = conv.forward(store, x);
            let (act, d) = silu_with_grad(&a.data);
            acts.push(act);
            branch.push((cache, d));
        }
        let views: Vec<_> = acts.iter().map(|a| a.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("same rows");
        let projected = self.project.forward(store, concat.view());
        let (act, dproj) = silu_with_grad(&projected);
        let y = &x.data + &act;
        (
            FeatureMap::new(x.height, x.width, y),
            DilatedCache {
                branch,
                concat,
                dproj,
            },
        )
    }

    fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &DilatedCache<T>,
        height: usize,
        width: usize,
        grad_out: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        let gz = grad_out * &cache.dproj;
        let gcat = self
            .project
            .backward(store, cache.concat.view(), gz.view(), grads, true)
            .expect("input gradient requested");
        let c = grad_out.ncols();
        let mut gx = grad_out.clone();
        for (i, (conv, (cc, d))) in self.branches.iter().zip(&cache.branch).enumerate() {
            let gb = &gcat.slice(s![.., i * c..(i + 1) * c]) * d;
            let gin = conv
                .backward(store, cc, height, width, &gb, grads, true)
                .expect("input gradient requested");
            gx += &gin;
        }
        gx
    }
}

/// Three conv + SiLU + 2x2 average-pool stages. The outputs of the second
/// and third stage (strides 4 and 8) are the two feature scales, each with
/// an optional dilated refinement block.
#[derive(Debug, Clone)]
pub struct Encoder {
    stages: [Conv2d; 3],
    refine4: Option<DilatedBlock>,
    refine8: Option<DilatedBlock>,
    in_channels: usize,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    conv: ConvCache<T>,
    dact: Array2<T>,
    height: usize,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    stages: Vec<StageCache<T>>,
    refine4: Option<DilatedCache<T>>,
    refine8: Option<DilatedCache<T>>,
}

#[derive(Debug, Clone)]
pub struct Encoded<T> {
    pub stride4: FeatureMap<T>,
    pub stride8: FeatureMap<T>,
    pub cache: EncoderCache<T>,
}

impl Encoder {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        in_channels: usize,
        widths: [usize; 3],
        dilated: bool,
        rng: &mut R,
    ) -> Self {
        let c1 = Conv2d::new(store, "encoder.stage1", in_channels, widths[0], 1, rng);
        let c2 = Conv2d::new(store, "encoder.stage2", widths[0], widths[1], 1, rng);
        let c3 = Conv2d::new(store, "encoder.stage3", widths[1], widths[2], 1, rng);
        let refine4 = dilated.then(|| DilatedBlock::new(store, "encoder.refine4", widths[1], rng));
        let refine8 = dilated.then(|| DilatedBlock::new(store, "encoder.refine8", widths[2], rng));
        Self {
            stages: [c1, c2, c3],
            refine4,
            refine8,
            in_channels,
        }
    }

    pub fn channels4(&self) -> usize {
        self.stages[1].out_channels()
    }

    pub fn channels8(&self) -> usize {
        self.stages[2].out_channels()
    }

    pub fn to_feature_map<T: Real>(&self, image: &Image) -> Result<FeatureMap<T>> {
        if image.height % 8 != 0 || image.width % 8 != 0 || image.height == 0 || image.width == 0 {
            return Err(Error::Shape(format!(
                "image {}x{} is not divisible by 8",
                image.height, image.width
            )));
        }
        if image.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} channels, image has {}",
                self.in_channels, image.channels
            )));
        }
        let data = Array2::from_shape_vec(
            (image.height * image.width, image.channels),
            image.data.iter().map(|&v| T::of(v)).collect(),
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(FeatureMap::new(image.height, image.width, data))
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, image: &Image) -> Result<Encoded<T>> {
        let mut x = self.to_feature_map::<T>(image)?;
        let mut stages = Vec::with_capacity(3);
        let mut raw = Vec::with_capacity(3);
        for conv in &self.stages {
            let (a, cache) = conv.forward(store, &x);
            let (act, dact) = silu_with_grad(&a.data);
            let pooled = avg_pool2(&FeatureMap::new(a.height, a.width, act));
            stages.push(StageCache {
                conv: cache,
                dact,
                height: a.height,
                width: a.width,
            });
            raw.push(pooled.clone());
            x = pooled;
        }
        let (stride4, refine4) = match &self.refine4 {
            Some(block) => {
                let (y, c) = block.forward(store, &raw[1]);
                (y, Some(c))
            }
            None => (raw[1].clone(), None),
        };
        let (stride8, refine8) = match &self.refine8 {
            Some(block) => {
                let (y, c) = block.forward(store, &raw[2]);
                (y, Some(c))
            }
            None => (raw[2].clone(), None),
        };
        Ok(Encoded {
            stride4,
            stride8,
            cache: EncoderCache {
                stages,
                refine4,
                refine8,
            },
        })
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        encoded: &Encoded<T>,
        grad4: &Array2<T>,
        grad8: &Array2<T>,
        grads: &mut Gradients<T>,
    ) {
        let cache = &encoded.cache;
        let (h4, w4) = (encoded.stride4.height, encoded.stride4.width);
        let (h8, w8) = (encoded.stride8.height, encoded.stride8.width);
        let mut g = match (&self.refine8, &cache.refine8) {
            (Some(b), Some(c)) => b.backward(store, c, h8, w8, grad8, grads),
            _ => grad8.clone(),
        };
        let mut carry: Option<Array2<T>> = None;
        for (i, (conv, sc)) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            if i == 1 {
                let mut g4 = match (&self.refine4, &cache.refine4) {
                    (Some(b), Some(c)) => b.backward(store, c, h4, w4, grad4, grads),
                    _ => grad4.clone(),
                };
                if let Some(from_above) = carry.take() {
                    g4 += &from_above;
                }
                g = g4;
            } else if i == 0 {
                g = carry.take().expect("stage gradient");
            }
            let mut ga = avg_pool2_backward(sc.height, sc.width, &g);
            ga *= &sc.dact;
            carry = conv.backward(store, &sc.conv, sc.height, sc.width, &ga, grads, i > 0);
        }
    }
}
