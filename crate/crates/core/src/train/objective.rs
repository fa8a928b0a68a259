use crate::error::Result;
use crate::losses::{
    loss_apg_neg, loss_apg_pos, loss_cls, loss_loc, AuxiliarySet, LossBreakdown, LossWeights, PositiveTarget,
};
use crate::matching::{match_proposals, nearest_assignment, MatchResult};
use crate::model::{AuxPrediction, ProposalField};
use crate::scene::Point;

use super::Strategy;

/// Assignment used by the point loss, or `None` when the strategy has no
/// point loss.
pub fn select_targets(strategy: Strategy, gt: &[Point], field: &ProposalField, tau: f64) -> Result<Option<MatchResult>> {
    match strategy {
        Strategy::Matcher | Strategy::MatcherApg => match_proposals(gt, field, tau).map(Some),
        Strategy::NearestPoint => nearest_assignment(gt, field, tau).map(Some),
        Strategy::ApgOnly => Ok(None),
    }
}

/// Loss of one image and its gradient with respect to every query of the
/// forward pass: grid proposals, then auxiliary positives, then negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageObjective {
    pub breakdown: LossBreakdown,
    pub d_conf: Vec<f64>,
    pub d_offset: Vec<[f64; 2]>,
    pub matched: Option<MatchResult>,
}

pub fn image_objective(
    strategy: Strategy,
    gt: &[Point],
    field: &ProposalField,
    aux: &AuxiliarySet,
    aux_preds: &[AuxPrediction],
    weights: &LossWeights,
    positive_target: PositiveTarget,
) -> Result<ImageObjective> {
    let m = field.len();
    let n_pos = aux.positives.len();
    let mut d_conf = vec![0.0; m + aux_preds.len()];
    let mut d_offset = vec![[0.0; 2]; m + aux_preds.len()];

    let matched = select_targets(strategy, gt, field, weights.tau)?;
    let (l_cls, l_loc) = match &matched {
        Some(mr) => {
            let cls = loss_cls(&field.confidences, &mr.positives, weights.lambda1);
            let loc = loss_loc(gt, &field.positions, &mr.psi, field.gamma);
            for j in 0..m {
                d_conf[j] = cls.d_conf[j];
                d_offset[j][0] = weights.lambda2 * loc.d_offset[j][0];
                d_offset[j][1] = weights.lambda2 * loc.d_offset[j][1];
            }
            (cls.value, loc.value)
        }
        None => (0.0, 0.0),
    };

    let (mut l_pos, mut l_neg) = (0.0, 0.0);
    if strategy.uses_apg() && !aux.is_empty() {
        let pos = loss_apg_pos(
            gt,
            aux,
            &aux_preds[..n_pos],
            weights.lambda3,
            positive_target,
            field.gamma,
        );
        let neg = loss_apg_neg(gt.len(), aux, &aux_preds[n_pos..], weights.lambda4);
        let w = weights.lambda5;
        for (i, (dc, doff)) in pos.d_conf.iter().zip(&pos.d_offset).enumerate() {
            d_conf[m + i] = w * dc;
            d_offset[m + i] = [w * doff[0], w * doff[1]];
        }
        for (i, (dc, doff)) in neg.d_conf.iter().zip(&neg.d_offset).enumerate() {
            d_conf[m + n_pos + i] = w * dc;
            d_offset[m + n_pos + i] = [w * doff[0], w * doff[1]];
        }
        l_pos = pos.value;
        l_neg = neg.value;
    }

    let breakdown = match strategy {
        Strategy::ApgOnly => LossBreakdown::apg_only(l_pos, l_neg, weights)?,
        _ => LossBreakdown::assemble(l_cls, l_loc, l_pos, l_neg, weights)?,
    };
    Ok(ImageObjective {
        breakdown,
        d_conf,
        d_offset,
        matched,
    })
}
