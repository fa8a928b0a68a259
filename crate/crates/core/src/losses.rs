//! Point losses, auxiliary point sampling and the auxiliary guidance losses.
//!
//! Every loss returns its value together with its gradient with respect to
//! the confidences and the raw (unscaled) offsets it was computed from.
//! Positions are `anchor + gamma * offset`, so a positional gradient `g`
//! becomes `gamma * g` on the offset.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AuxPrediction;
use crate::scene::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of unmatched proposals in the classification loss.
    pub lambda1: f64,
    /// Localization weight in the point loss.
    pub lambda2: f64,
    /// Position weight for auxiliary positives.
    pub lambda3: f64,
    /// Offset weight for auxiliary negatives.
    pub lambda4: f64,
    /// Weight of the auxiliary guidance term in the overall loss.
    pub lambda5: f64,
    /// Distance weight in the matching cost.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 2e-4,
            lambda3: 2e-4,
            lambda4: 2e-4,
            lambda5: 0.2,
            tau: 5e-2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("tau", self.tau),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

/// What the localization term of an auxiliary positive compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveTarget {
    /// `|p - p̂*|^2` with `p̂* = query + gamma * offset`.
    #[default]
    Position,
    /// `|offset + r / gamma|^2` where `r` is the displacement of the
    /// auxiliary point from its ground truth.
    RawOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxConfig {
    pub k_pos: usize,
    pub k_neg: usize,
    /// Positive offsets lie in `[-n_pos, n_pos]` per component (pixels).
    pub n_pos: f64,
    /// Negative offsets lie in `[-n_neg, -n_pos] ∪ [n_pos, n_neg]`.
    pub n_neg: f64,
    pub positive_target: PositiveTarget,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            k_pos: 2,
            k_neg: 2,
            n_pos: 2.0,
            n_neg: 8.0,
            positive_target: PositiveTarget::Position,
        }
    }
}

impl AuxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_pos > 0.0 && self.n_pos < self.n_neg && self.n_neg.is_finite()) {
            return Err(Error::Config(format!(
                "auxiliary ranges need 0 < n_pos < n_neg, got ({}, {})",
                self.n_pos, self.n_neg
            )));
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.k_pos == 0 && self.k_neg == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxPoint {
    pub gt_index: usize,
    /// Generating offset from the ground truth, pixels.
    pub offset: [f64; 2],
    /// `gt + offset`; may lie outside the image.
    pub point: Point,
}

/// Auxiliary points for one image, ground-truth major: the positives of
/// ground truth `l` are `positives[l * k_pos .. (l + 1) * k_pos]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuxiliarySet {
    pub k_pos: usize,
    pub k_neg: usize,
    pub positives: Vec<AuxPoint>,
    pub negatives: Vec<AuxPoint>,
}

impl AuxiliarySet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Query coordinates, positives first.
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.positives.iter().chain(&self.negatives).map(|a| a.point)
    }
}

/// One component of a negative offset: a fair random sign times a
/// magnitude uniform on `[n_pos, n_neg]`.
pub fn sample_negative_component<R: Rng>(rng: &mut R, n_pos: f64, n_neg: f64) -> f64 {
    let magnitude = rng.gen_range(n_pos..=n_neg);
    if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

pub fn sample_positive_component<R: Rng>(rng: &mut R, n_pos: f64) -> f64 {
    rng.gen_range(-n_pos..=n_pos)
}

pub fn sample_auxiliary<R: Rng>(gt: &[Point], config: &AuxConfig, rng: &mut R) -> Result<AuxiliarySet> {
    config.validate()?;
    let mut set = AuxiliarySet {
        k_pos: config.k_pos,
        k_neg: config.k_neg,
        positives: Vec::with_capacity(gt.len() * config.k_pos),
        negatives: Vec::with_capacity(gt.len() * config.k_neg),
    };
    let make = |gt_index: usize, p: Point, offset: [f64; 2]| AuxPoint {
        gt_index,
        offset,
        point: Point::new(p.x + offset[0], p.y + offset[1]),
    };
    for (l, &p) in gt.iter().enumerate() {
        for _ in 0..config.k_pos {
            let o = [
                sample_positive_component(rng, config.n_pos),
                sample_positive_component(rng, config.n_pos),
            ];
            set.positives.push(make(l, p, o));
        }
        for _ in 0..config.k_neg {
            let o = [
                sample_negative_component(rng, config.n_pos, config.n_neg),
                sample_negative_component(rng, config.n_pos, config.n_neg),
            ];
            set.negatives.push(make(l, p, o));
        }
    }
    Ok(set)
}

pub fn sample_auxiliary_seeded(gt: &[Point], config: &AuxConfig, seed: u64) -> Result<AuxiliarySet> {
    sample_auxiliary(gt, config, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub d_conf: Vec<f64>,
    pub d_offset: Vec<[f64; 2]>,
}

impl Term {
    fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            d_conf: vec![0.0; n],
            d_offset: vec![[0.0; 2]; n],
        }
    }
}

/// `-(1/M) (sum_pos ln c + lambda1 sum_neg ln(1 - c))`. `positives` must
/// hold distinct indices.
pub fn loss_cls(confidences: &[f64], positives: &[usize], lambda1: f64) -> Term {
    let m = confidences.len();
    let mut t = Term::zeros(m);
    if m == 0 {
        return t;
    }
    let mut is_pos = vec![false; m];
    for &j in positives {
        is_pos[j] = true;
    }
    let inv_m = 1.0 / m as f64;
    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    for (j, &c) in confidences.iter().enumerate() {
        if is_pos[j] {
            pos_sum += c.ln();
            t.d_conf[j] = -inv_m / c;
        } else {
            neg_sum += (1.0 - c).ln();
            t.d_conf[j] = lambda1 * inv_m / (1.0 - c);
        }
    }
    t.value = -inv_m * (pos_sum + lambda1 * neg_sum);
    t
}

/// `(1/N) sum_i |p_i - p̂_psi(i)|^2`; zero when there is no ground truth.
pub fn loss_loc(gt: &[Point], positions: &[Point], psi: &[usize], gamma: f64) -> Term {
    let mut t = Term::zeros(positions.len());
    if gt.is_empty() {
        return t;
    }
    let inv_n = 1.0 / gt.len() as f64;
    for (i, &p) in gt.iter().enumerate() {
        let j = psi[i];
        let q = positions[j];
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        t.value += dx * dx + dy * dy;
        t.d_offset[j][0] += 2.0 * inv_n * gamma * dx;
        t.d_offset[j][1] += 2.0 * inv_n * gamma * dy;
    }
    t.value *= inv_n;
    t
}

/// Auxiliary positives: `(1/N)(1/k_pos) sum (-ln c* + lambda3 |p - p̂*|^2)`.
/// `preds[i]` is the prediction for `aux.positives[i]`.
pub fn loss_apg_pos(
    gt: &[Point],
    aux: &AuxiliarySet,
    preds: &[AuxPrediction],
    lambda3: f64,
    target: PositiveTarget,
    gamma: f64,
) -> Term {
    let mut t = Term::zeros(preds.len());
    if gt.is_empty() || aux.k_pos == 0 {
        return t;
    }
    let scale = 1.0 / (gt.len() * aux.k_pos) as f64;
    for (i, (a, pred)) in aux.positives.iter().zip(preds).enumerate() {
        let p = gt[a.gt_index];
        t.value -= pred.confidence.ln();
        t.d_conf[i] = -scale / pred.confidence;
        let (rx, ry) = match target {
            PositiveTarget::Position => (pred.position.x - p.x, pred.position.y - p.y),
            // Offset that would land exactly on the ground truth.
            PositiveTarget::RawOffset => (
                pred.offset[0] - (p.x - pred.query.x) / gamma,
                pred.offset[1] - (p.y - pred.query.y) / gamma,
            ),
        };
        t.value += lambda3 * (rx * rx + ry * ry);
        let chain = match target {
            PositiveTarget::Position => gamma,
            PositiveTarget::RawOffset => 1.0,
        };
        t.d_offset[i] = [
            scale * lambda3 * 2.0 * rx * chain,
            scale * lambda3 * 2.0 * ry * chain,
        ];
    }
    t.value *= scale;
    t
}

/// Auxiliary negatives: `(1/N)(1/k_neg) sum (-ln(1 - c*) + lambda4 |offset*|^2)`.
/// `preds[i]` is the prediction for `aux.negatives[i]`.
pub fn loss_apg_neg(n_gt: usize, aux: &AuxiliarySet, preds: &[AuxPrediction], lambda4: f64) -> Term {
    let mut t = Term::zeros(preds.len());
    if n_gt == 0 || aux.k_neg == 0 {
        return t;
    }
    let scale = 1.0 / (n_gt * aux.k_neg) as f64;
    for (i, pred) in preds.iter().enumerate().take(aux.negatives.len()) {
        let c = pred.confidence;
        let [ox, oy] = pred.offset;
        t.value += -(1.0 - c).ln() + lambda4 * (ox * ox + oy * oy);
        t.d_conf[i] = scale / (1.0 - c);
        t.d_offset[i] = [scale * lambda4 * 2.0 * ox, scale * lambda4 * 2.0 * oy];
    }
    t.value *= scale;
    t
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_point: f64,
    pub l_apg_pos: f64,
    pub l_apg_neg: f64,
    pub l_apg: f64,
    pub l_overall: f64,
}

impl LossBreakdown {
    /// `l_point = l_cls + lambda2 l_loc`, `l_apg = pos + neg`,
    /// `l_overall = l_point + lambda5 l_apg`.
    pub fn assemble(l_cls: f64, l_loc: f64, l_apg_pos: f64, l_apg_neg: f64, w: &LossWeights) -> Result<Self> {
        let l_point = l_cls + w.lambda2 * l_loc;
        let l_apg = l_apg_pos + l_apg_neg;
        Self {
            l_cls,
            l_loc,
            l_point,
            l_apg_pos,
            l_apg_neg,
            l_apg,
            l_overall: l_point + w.lambda5 * l_apg,
        }
        .checked()
    }

    /// Objective without the point loss: `l_overall = lambda5 l_apg`.
    pub fn apg_only(l_apg_pos: f64, l_apg_neg: f64, w: &LossWeights) -> Result<Self> {
        let l_apg = l_apg_pos + l_apg_neg;
        Self {
            l_apg_pos,
            l_apg_neg,
            l_apg,
            l_overall: w.lambda5 * l_apg,
            ..Self::default()
        }
        .checked()
    }

    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("l_cls", self.l_cls),
            ("l_loc", self.l_loc),
            ("l_point", self.l_point),
            ("l_apg_pos", self.l_apg_pos),
            ("l_apg_neg", self.l_apg_neg),
            ("l_apg", self.l_apg),
            ("l_overall", self.l_overall),
        ]
    }

    /// Fails naming the first non-finite component.
    pub fn checked(self) -> Result<Self> {
        match self.fields().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite((*name).to_string())),
            None => Ok(self),
        }
    }

    /// Running mean helper: adds `other * weight` field by field.
    pub fn add_scaled(&mut self, other: &Self, weight: f64) {
        self.l_cls += weight * other.l_cls;
        self.l_loc += weight * other.l_loc;
        self.l_point += weight * other.l_point;
        self.l_apg_pos += weight * other.l_apg_pos;
        self.l_apg_neg += weight * other.l_apg_neg;
        self.l_apg += weight * other.l_apg;
        self.l_overall += weight * other.l_overall;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(query: Point, confidence: f64, offset: [f64; 2], gamma: f64) -> AuxPrediction {
        AuxPrediction {
            query,
            confidence,
            offset,
            position: Point::new(query.x + gamma * offset[0], query.y + gamma * offset[1]),
        }
    }

    #[test]
    fn cls_hand_values() {
        let t = loss_cls(&[0.5, 0.5], &[0], 0.5);
        assert!((t.value - 0.519860).abs() < 1e-6);
        let perfect = loss_cls(&[1.0 - 1e-6, 1e-6], &[0], 0.5);
        assert!(perfect.value < 1e-5);
        let no_neg = loss_cls(&[0.3, 0.9, 0.2], &[1], 0.0);
        assert!((no_neg.value + 0.9f64.ln() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn loc_hand_values() {
        let gt = [Point::new(0.0, 0.0)];
        assert_eq!(loss_loc(&gt, &[Point::new(3.0, 4.0)], &[0], 100.0).value, 25.0);
        assert_eq!(loss_loc(&gt, &[Point::new(0.0, 0.0)], &[0], 100.0).value, 0.0);
        let gt2 = [Point::new(0.0, 0.0), Point::new(1.0, 1.0)];
        let pos = [Point::new(3.0, 4.0), Point::new(1.0, 1.0)];
        assert_eq!(loss_loc(&gt2, &pos, &[0, 1], 100.0).value, 12.5);
        assert_eq!(loss_loc(&[], &pos, &[], 100.0).value, 0.0);
    }

    #[test]
    fn apg_hand_values() {
        let gamma = 100.0;
        let gt = [Point::new(10.0, 10.0)];
        let aux = AuxiliarySet {
            k_pos: 1,
            k_neg: 2,
            positives: vec![AuxPoint {
                gt_index: 0,
                offset: [1.0, 0.0],
                point: Point::new(11.0, 10.0),
            }],
            negatives: vec![],
        };
        // |p - p̂*|^2 = 4 with p̂* = (12, 10).
        let p = pred(Point::new(11.0, 10.0), 0.5, [0.01, 0.0], gamma);
        let t = loss_apg_pos(&gt, &aux, &[p], 2e-4, PositiveTarget::Position, gamma);
        assert!((t.value - 0.693947).abs() < 1e-6);
        let t0 = loss_apg_pos(&gt, &aux, &[p], 0.0, PositiveTarget::Position, gamma);
        assert!((t0.value - std::f64::consts::LN_2).abs() < 1e-12);
        let best = pred(Point::new(11.0, 10.0), 1.0 - 1e-6, [-0.01, 0.0], gamma);
        assert!(loss_apg_pos(&gt, &aux, &[best], 2e-4, PositiveTarget::Position, gamma).value < 1e-5);
        assert!(loss_apg_pos(&gt, &aux, &[best], 2e-4, PositiveTarget::RawOffset, gamma).value < 1e-5);

        let neg_aux = AuxiliarySet {
            k_pos: 0,
            k_neg: 1,
            positives: vec![],
            negatives: vec![AuxPoint {
                gt_index: 0,
                offset: [5.0, 0.0],
                point: Point::new(15.0, 10.0),
            }],
        };
        let n = pred(Point::new(15.0, 10.0), 0.5, [1.0, 0.0], gamma);
        let one = loss_apg_neg(1, &neg_aux, &[n], 2e-4);
        assert!((one.value - 0.693347).abs() < 1e-6);
        let two_aux = AuxiliarySet {
            k_neg: 2,
            negatives: vec![neg_aux.negatives[0]; 2],
            ..neg_aux.clone()
        };
        let perfect = pred(Point::new(15.0, 10.0), 1e-6, [0.0, 0.0], gamma);
        let two = loss_apg_neg(1, &two_aux, &[n, perfect], 2e-4);
        assert!((two.value - 0.693347 / 2.0).abs() < 1e-6);
        assert!(loss_apg_neg(1, &neg_aux, &[perfect], 2e-4).value < 1e-5);
    }

    #[test]
    fn negative_offset_gradient_points_to_zero() {
        let aux = AuxiliarySet {
            k_pos: 0,
            k_neg: 1,
            positives: vec![],
            negatives: vec![AuxPoint {
                gt_index: 0,
                offset: [4.0, -4.0],
                point: Point::new(4.0, 0.0),
            }],
        };
        for off in [[0.3, -0.2], [-0.05, 0.4]] {
            let p = pred(Point::new(4.0, 0.0), 0.3, off, 100.0);
            let t = loss_apg_neg(1, &aux, &[p], 2e-4);
            // Descent direction is -grad; it must shrink the offset.
            for k in 0..2 {
                assert!(t.d_offset[0][k] * off[k] > 0.0);
            }
        }
    }

    #[test]
    fn overall_assembly() {
        let w = LossWeights::default();
        let b = LossBreakdown {
            l_point: 1.0,
            l_apg: 0.5,
            l_overall: 1.0 + w.lambda5 * 0.5,
            ..LossBreakdown::default()
        };
        assert!((b.l_overall - 1.1).abs() < 1e-12);
        let a = LossBreakdown::assemble(0.7, 10.0, 0.0, 0.0, &w).unwrap();
        assert_eq!(a.l_overall, a.l_point);
        assert_eq!(a.l_point, 0.7 + 2e-4 * 10.0);
        let zero = LossBreakdown::assemble(0.0, 0.0, 0.0, 0.0, &w).unwrap();
        assert!(zero.fields().iter().all(|(_, v)| *v == 0.0));
        match LossBreakdown::assemble(f64::NAN, 0.0, 0.0, 0.0, &w) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "l_cls"),
            other => panic!("{other:?}"),
        }
        match LossBreakdown::assemble(0.1, 0.0, f64::INFINITY, 0.0, &w) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "l_apg_pos"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampling_supports_and_layout() {
        let gt = [Point::new(50.0, 50.0), Point::new(10.0, 90.0)];
        let cfg = AuxConfig::default();
        let set = sample_auxiliary_seeded(&gt, &cfg, 3).unwrap();
        assert_eq!(set.positives.len(), 4);
        assert_eq!(set.negatives.len(), 4);
        assert_eq!(set.positives[2].gt_index, 1);
        for a in &set.positives {
            assert!(a.offset.iter().all(|o| o.abs() <= 2.0));
        }
        for a in &set.negatives {
            assert!(a.offset.iter().all(|o| (2.0..=8.0).contains(&o.abs())));
            let g = gt[a.gt_index];
            assert_eq!(a.point, Point::new(g.x + a.offset[0], g.y + a.offset[1]));
        }
        assert_eq!(set, sample_auxiliary_seeded(&gt, &cfg, 3).unwrap());
        let off = AuxConfig {
            k_pos: 0,
            k_neg: 0,
            ..cfg
        };
        assert!(sample_auxiliary_seeded(&gt, &off, 3).unwrap().is_empty());
        let bad = AuxConfig {
            n_pos: 8.0,
            n_neg: 8.0,
            ..cfg
        };
        assert!(matches!(sample_auxiliary_seeded(&gt, &bad, 0), Err(Error::Config(_))));
    }
}
