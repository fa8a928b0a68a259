//! The point-proposal network: a small convolutional encoder with two
//! feature scales, continuous feature lookup on both, and one shared head
//! predicting a confidence and a coordinate offset for any query point.

mod checkpoint;
mod encoder;
mod head;
mod ifi;
mod reference;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Tensor};
pub use encoder::{Encoded, Encoder};
pub use head::{confidence_from_logit, confidence_grad, PredictionHead, CONFIDENCE_EPS};
pub use ifi::{IfiCache, IfiVariant, Interpolator, Lattice, Neighbor, PositionalEncoding, QueryPlan};
pub use reference::{ProposalId, ReferenceGrid};

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, MlpCache, ParamStore, Real};
use crate::scene::{Image, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub encoder_channels: [usize; 3],
    pub dilated_block: bool,
    pub ifi_variant: IfiVariant,
    pub ifi_hidden: usize,
    pub ifi_out: usize,
    pub encoding: PositionalEncoding,
    /// Hidden widths of the prediction head. The large reference setting is
    /// `[1024, 512, 256, 256]`.
    pub head_hidden: Vec<usize>,
    /// Proposal stride, 4 or 8.
    pub stride: usize,
    /// Reference points per cell.
    pub k: usize,
    /// Scale from raw head offsets to pixels.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            encoder_channels: [8, 16, 32],
            dilated_block: true,
            ifi_variant: IfiVariant::Ifi,
            ifi_hidden: 32,
            ifi_out: 32,
            encoding: PositionalEncoding::default(),
            head_hidden: vec![128, 64, 64, 64],
            stride: 8,
            k: 4,
            gamma: 100.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.head_hidden.is_empty() || self.head_hidden.contains(&0) {
            return fail("model.head_hidden must be a non-empty list of positive widths");
        }
        if self.encoder_channels.contains(&0) || self.in_channels == 0 {
            return fail("model channel widths must be positive");
        }
        if self.stride != 4 && self.stride != 8 {
            return fail("model.stride must be 4 or 8");
        }
        if self.k == 0 {
            return fail("model.k must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail("model.gamma must be positive");
        }
        if self.ifi_variant.uses_transform() && (self.ifi_hidden == 0 || self.ifi_out == 0) {
            return fail("model.ifi_hidden and model.ifi_out must be positive");
        }
        Ok(())
    }
}

/// Proposals emitted for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalField {
    pub image_id: String,
    pub ids: Vec<ProposalId>,
    pub reference: Vec<Point>,
    /// Raw head offsets, before scaling by `gamma`.
    pub offsets: Vec<[f64; 2]>,
    pub confidences: Vec<f64>,
    /// `reference + gamma * offset`.
    pub positions: Vec<Point>,
    pub gamma: f64,
}

impl ProposalField {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Head output at an arbitrary (auxiliary) query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxPrediction {
    pub query: Point,
    pub confidence: f64,
    pub offset: [f64; 2],
    pub position: Point,
}

/// `anchor + gamma * offset`.
#[inline]
pub fn offset_position(anchor: Point, offset: [f64; 2], gamma: f64) -> Point {
    Point::new(anchor.x + gamma * offset[0], anchor.y + gamma * offset[1])
}

/// Clamps `p` into the pixel-center hull of an image.
pub fn clamp_to_image(p: Point, height: usize, width: usize) -> Point {
    Point::new(
        p.x.clamp(0.0, width.saturating_sub(1) as f64),
        p.y.clamp(0.0, height.saturating_sub(1) as f64),
    )
}

/// Everything needed to backpropagate one image.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub field: ProposalField,
    pub aux: Vec<AuxPrediction>,
    encoded: Encoded<T>,
    plan4: QueryPlan,
    plan8: QueryPlan,
    ifi4: IfiCache<T>,
    ifi8: IfiCache<T>,
    head: MlpCache<T>,
}

impl<T> ForwardPass<T> {
    /// Confidences of grid proposals followed by auxiliary queries.
    pub fn all_confidences(&self) -> impl Iterator<Item = f64> + '_ {
        self.field
            .confidences
            .iter()
            .copied()
            .chain(self.aux.iter().map(|a| a.confidence))
    }
}

#[derive(Debug, Clone)]
pub struct ProposalModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Encoder,
    ifi4: Interpolator,
    ifi8: Interpolator,
    head: PredictionHead,
    reference: ReferenceGrid,
}

impl<T: Real> ProposalModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(
            &mut params,
            config.in_channels,
            config.encoder_channels,
            config.dilated_block,
            &mut rng,
        );
        let ifi = |params: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, channels: usize| {
            Interpolator::new(
                params,
                name,
                config.ifi_variant,
                channels,
                config.ifi_hidden,
                config.ifi_out,
                config.encoding,
                rng,
            )
        };
        let ifi4 = ifi(&mut params, &mut rng, "ifi4", encoder.channels4());
        let ifi8 = ifi(&mut params, &mut rng, "ifi8", encoder.channels8());
        let head = PredictionHead::new(
            &mut params,
            ifi4.out_dim() + ifi8.out_dim(),
            &config.head_hidden,
            &mut rng,
        );
        let reference = ReferenceGrid::new(config.stride, config.k)?;
        Ok(Self {
            config,
            params,
            encoder,
            ifi4,
            ifi8,
            head,
            reference,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn head(&self) -> &PredictionHead {
        &self.head
    }

    pub fn reference(&self) -> &ReferenceGrid {
        &self.reference
    }

    pub fn interpolators(&self) -> (&Interpolator, &Interpolator) {
        (&self.ifi4, &self.ifi8)
    }

    /// Same architecture, parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> ProposalModel<U> {
        ProposalModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            ifi4: self.ifi4.clone(),
            ifi8: self.ifi8.clone(),
            head: self.head.clone(),
            reference: self.reference.clone(),
        }
    }

    pub fn encode(&self, image: &Image) -> Result<Encoded<T>> {
        self.encoder.forward(&self.params, image)
    }

    /// Head input for every query: interpolated features of both scales,
    /// concatenated.
    fn features(
        &self,
        encoded: &Encoded<T>,
        queries: &[Point],
    ) -> Result<(Array2<T>, QueryPlan, QueryPlan, IfiCache<T>, IfiCache<T>)> {
        let l4 = Lattice::new(encoded.stride4.height, encoded.stride4.width, 4);
        let l8 = Lattice::new(encoded.stride8.height, encoded.stride8.width, 8);
        let plan4 = self.ifi4.plan(&l4, queries)?;
        let plan8 = self.ifi8.plan(&l8, queries)?;
        let (f4, c4) = self.ifi4.forward(&self.params, &encoded.stride4, &plan4)?;
        let (f8, c8) = self.ifi8.forward(&self.params, &encoded.stride8, &plan8)?;
        let feat = concatenate(Axis(1), &[f4.view(), f8.view()]).expect("same rows");
        Ok((feat, plan4, plan8, c4, c8))
    }

    /// Predicts `(confidence, offset)` from concatenated features.
    pub fn predict_head(&self, features: &Array2<T>) -> Result<Vec<(f64, [f64; 2])>> {
        if features.ncols() != self.head.in_dim() {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.head.in_dim(),
                features.ncols()
            )));
        }
        let out = self.head.eval(&self.params, features.view());
        Ok(out
            .rows()
            .into_iter()
            .map(|r| (confidence_from_logit(r[0].f64()), [r[1].f64(), r[2].f64()]))
            .collect())
    }

    /// Full forward pass over all grid anchors plus `aux_points`, keeping
    /// what the backward pass needs. Auxiliary points must lie inside the
    /// image (see [`clamp_to_image`]).
    pub fn forward(&self, image: &Image, image_id: &str, aux_points: &[Point]) -> Result<ForwardPass<T>> {
        let encoded = self.encode(image)?;
        let anchors = self.reference.anchors(image.height, image.width);
        let m = anchors.len();
        let queries: Vec<Point> = anchors
            .iter()
            .map(|&(_, p)| p)
            .chain(aux_points.iter().copied())
            .collect();
        let (feat, plan4, plan8, ifi4, ifi8) = self.features(&encoded, &queries)?;
        let (out, head) = self.head.forward(&self.params, feat);
        let gamma = self.config.gamma;

        let mut field = ProposalField {
            image_id: image_id.to_string(),
            ids: Vec::with_capacity(m),
            reference: Vec::with_capacity(m),
            offsets: Vec::with_capacity(m),
            confidences: Vec::with_capacity(m),
            positions: Vec::with_capacity(m),
            gamma,
        };
        let mut aux = Vec::with_capacity(aux_points.len());
        for (q, row) in out.rows().into_iter().enumerate() {
            let c = confidence_from_logit(row[0].f64());
            let offset = [row[1].f64(), row[2].f64()];
            let position = offset_position(queries[q], offset, gamma);
            if q < m {
                field.ids.push(anchors[q].0);
                field.reference.push(queries[q]);
                field.offsets.push(offset);
                field.confidences.push(c);
                field.positions.push(position);
            } else {
                aux.push(AuxPrediction {
                    query: queries[q],
                    confidence: c,
                    offset,
                    position,
                });
            }
        }
        Ok(ForwardPass {
            field,
            aux,
            encoded,
            plan4,
            plan8,
            ifi4,
            ifi8,
            head,
        })
    }

    pub fn propose(&self, image: &Image, image_id: &str) -> Result<ProposalField> {
        Ok(self.forward(image, image_id, &[])?.field)
    }

    /// Head predictions at arbitrary points through the same pathway as the
    /// grid proposals. Points are clamped into the image first.
    pub fn query_auxiliary(&self, image: &Image, points: &[Point]) -> Result<Vec<AuxPrediction>> {
        let clamped: Vec<Point> = points
            .iter()
            .map(|&p| clamp_to_image(p, image.height, image.width))
            .collect();
        Ok(self.forward(image, "", &clamped)?.aux)
    }

    /// Accumulates parameter gradients given `dL/dconfidence` and
    /// `dL/doffset` (raw, unscaled offsets) for every query of `pass`, grid
    /// proposals first.
    pub fn backward(
        &self,
        pass: &ForwardPass<T>,
        d_confidence: &[f64],
        d_offset: &[[f64; 2]],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let q = pass.field.len() + pass.aux.len();
        if d_confidence.len() != q || d_offset.len() != q {
            return Err(Error::Shape(format!(
                "backward expects {q} query gradients, got {} / {}",
                d_confidence.len(),
                d_offset.len()
            )));
        }
        let mut g = Array2::<T>::zeros((q, 3));
        for (i, c) in pass.all_confidences().enumerate() {
            g[(i, 0)] = T::of(d_confidence[i] * confidence_grad(c));
            g[(i, 1)] = T::of(d_offset[i][0]);
            g[(i, 2)] = T::of(d_offset[i][1]);
        }
        let g_feat = self.head.backward(&self.params, &pass.head, g, grads);
        let d4 = self.ifi4.out_dim();
        let g4 = g_feat.slice(s![.., ..d4]).to_owned();
        let g8 = g_feat.slice(s![.., d4..]).to_owned();
        let grid4 = self.ifi4.backward(
            &self.params,
            &pass.encoded.stride4,
            &pass.plan4,
            &pass.ifi4,
            &g4,
            grads,
        );
        let grid8 = self.ifi8.backward(
            &self.params,
            &pass.encoded.stride8,
            &pass.plan8,
            &pass.ifi8,
            &g8,
            grads,
        );
        self.encoder
            .backward(&self.params, &pass.encoded, &grid4, &grid8, grads);
        Ok(())
    }
}
