//! Counting and localization metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{hungarian, CostMatrix};
use crate::model::ProposalField;
use crate::scene::{BoxSize, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct CountingResult {
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
    /// Mean of `pred - gt`; negative when undercounting.
    pub mean_signed_error: f64,
    pub per_image: Vec<(usize, usize)>,
}

/// Counting errors over `(gt_count, pred_count)` pairs.
pub fn counting_metrics(pairs: &[(usize, usize)]) -> Result<CountingResult> {
    if pairs.is_empty() {
        return Err(Error::Config("counting metrics need at least one image".into()));
    }
    let q = pairs.len() as f64;
    let (mut abs, mut sq, mut signed) = (0.0, 0.0, 0.0);
    for &(gt, pred) in pairs {
        let e = pred as f64 - gt as f64;
        abs += e.abs();
        sq += e * e;
        signed += e;
    }
    Ok(CountingResult {
        mae: abs / q,
        mse: (sq / q).sqrt(),
        mean_signed_error: signed / q,
        per_image: pairs.to_vec(),
    })
}

/// Distance threshold for a true positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaSpec {
    Fixed(f64),
    /// Per ground truth `sqrt(w^2 + h^2) / 2`.
    Boxes(Vec<BoxSize>),
}

impl SigmaSpec {
    pub fn box_sigma(b: BoxSize) -> f64 {
        (b.w * b.w + b.h * b.h).sqrt() / 2.0
    }

    fn per_gt(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            SigmaSpec::Fixed(s) if *s > 0.0 && s.is_finite() => Ok(vec![*s; n]),
            SigmaSpec::Fixed(s) => Err(Error::Config(format!("sigma must be positive, got {s}"))),
            SigmaSpec::Boxes(b) if b.len() == n => Ok(b.iter().map(|&b| Self::box_sigma(b)).collect()),
            SigmaSpec::Boxes(b) => Err(Error::Shape(format!("{} boxes for {n} ground-truth points", b.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalizationResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LocalizationResult {
    /// Precision, recall and F1 from raw counts. Empty denominators give 0.
    pub fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        let precision = if n_pred > 0 { tp as f64 / n_pred as f64 } else { 0.0 };
        let recall = if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp: n_pred - tp,
            fn_: n_gt - tp,
            precision,
            recall,
            f1,
        }
    }
}

/// One-to-one pairing of predictions with ground truths that first
/// maximizes the number of pairs within threshold, then minimizes their
/// total distance. Returns `(gt, pred)` index pairs that count as hits.
pub fn tp_pairs(gt: &[Point], preds: &[Point], sigma: &SigmaSpec) -> Result<Vec<(usize, usize)>> {
    let sig = sigma.per_gt(gt.len())?;
    if gt.is_empty() || preds.is_empty() {
        return Ok(Vec::new());
    }
    // Any hit outweighs every possible sum of hit distances.
    let max_sigma = sig.iter().cloned().fold(0.0, f64::max);
    let bonus = max_sigma * gt.len().min(preds.len()) as f64 + 1.0;
    let cost = CostMatrix::from_fn(gt.len(), preds.len(), |i, j| {
        let d = gt[i].dist(preds[j]);
        if d <= sig[i] {
            d - bonus
        } else {
            0.0
        }
    });
    let hit = |i: usize, j: usize| gt[i].dist(preds[j]) <= sig[i];
    let pairs = if gt.len() <= preds.len() {
        hungarian(&cost)?.into_iter().enumerate().collect::<Vec<_>>()
    } else {
        hungarian(&cost.transposed())?
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    };
    let mut hits: Vec<_> = pairs.into_iter().filter(|&(i, j)| hit(i, j)).collect();
    hits.sort_unstable();
    Ok(hits)
}

pub fn localization_metrics(gt: &[Point], preds: &[Point], sigma: &SigmaSpec) -> Result<LocalizationResult> {
    let tp = tp_pairs(gt, preds, sigma)?.len();
    Ok(LocalizationResult::from_counts(tp, preds.len(), gt.len()))
}

/// Proposals with confidence strictly above `threshold`.
pub fn infer_predictions(field: &ProposalField, threshold: f64) -> Vec<Point> {
    field
        .confidences
        .iter()
        .zip(&field.positions)
        .filter(|(&c, _)| c > threshold)
        .map(|(_, &p)| p)
        .collect()
}
