//! Proposal-to-target assignment and matching-stability diagnostics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{ProposalField, ProposalId};
use crate::scene::Point;

/// Row-major `rows x cols` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "cost matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    /// Sum of `at(i, psi[i])`, accumulated in row order.
    pub fn total(&self, psi: &[usize]) -> f64 {
        psi.iter().enumerate().map(|(i, &j)| self.at(i, j)).sum()
    }
}

/// `D[i][j] = tau * |p_i - p̂_j| - ĉ_j`.
pub fn build_cost(gt: &[Point], positions: &[Point], confidences: &[f64], tau: f64) -> Result<CostMatrix> {
    if positions.len() != confidences.len() {
        return Err(Error::Shape(format!(
            "{} proposal positions but {} confidences",
            positions.len(),
            confidences.len()
        )));
    }
    if positions.len() < gt.len() {
        return Err(Error::Infeasible {
            gt: gt.len(),
            proposals: positions.len(),
        });
    }
    Ok(CostMatrix::from_fn(gt.len(), positions.len(), |i, j| {
        tau * gt[i].dist(positions[j]) - confidences[j]
    }))
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
///
/// Shortest augmenting paths with row/column potentials, `O(rows^2 cols)`.
/// Columns are scanned in index order and only a strictly smaller slack
/// replaces the current candidate, so equal costs resolve to lower indices
/// and the result depends only on the matrix.
pub fn hungarian(cost: &CostMatrix) -> Result<Vec<usize>> {
    let (n, m) = (cost.rows, cost.cols);
    if n > m {
        return Err(Error::Infeasible { gt: n, proposals: m });
    }
    if let Some(k) = cost.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "cost matrix entry ({}, {})",
            k / m.max(1),
            k % m.max(1)
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based rows and columns; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut psi = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            psi[owner[j] - 1] = j - 1;
        }
    }
    Ok(psi)
}

/// Which proposals are supervised as positives for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Proposal index assigned to each ground-truth point.
    pub psi: Vec<usize>,
    pub total_cost: f64,
    /// Distinct assigned proposals, ascending.
    pub positives: Vec<usize>,
    /// Everything else, ascending.
    pub negatives: Vec<usize>,
    /// Set when two ground truths claimed the same proposal.
    pub duplicate_claims: bool,
}

/// Splits `0..m` into the proposals named by `psi` and the rest.
pub fn partition(psi: &[usize], m: usize) -> (Vec<usize>, Vec<usize>) {
    let mut is_pos = vec![false; m];
    for &j in psi {
        is_pos[j] = true;
    }
    (0..m).partition(|&j| is_pos[j])
}

impl MatchResult {
    fn from_psi(psi: Vec<usize>, cost: &CostMatrix) -> Self {
        let (positives, negatives) = partition(&psi, cost.cols);
        let duplicate_claims = positives.len() < psi.len();
        Self {
            total_cost: cost.total(&psi),
            psi,
            positives,
            negatives,
            duplicate_claims,
        }
    }

    /// Empty ground truth: every proposal is negative.
    pub fn empty(m: usize) -> Self {
        Self {
            psi: Vec::new(),
            total_cost: 0.0,
            positives: Vec::new(),
            negatives: (0..m).collect(),
            duplicate_claims: false,
        }
    }
}

/// Optimal one-to-one matching under the confidence-aware cost.
pub fn match_proposals(gt: &[Point], field: &ProposalField, tau: f64) -> Result<MatchResult> {
    if gt.is_empty() {
        return Ok(MatchResult::empty(field.len()));
    }
    let cost = build_cost(gt, &field.positions, &field.confidences, tau)?;
    let psi = hungarian(&cost)?;
    Ok(MatchResult::from_psi(psi, &cost))
}

/// Each ground truth independently claims its Euclidean-nearest proposal
/// (lowest index on ties). Several ground truths may claim the same one.
pub fn nearest_assignment(gt: &[Point], field: &ProposalField, tau: f64) -> Result<MatchResult> {
    if gt.is_empty() {
        return Ok(MatchResult::empty(field.len()));
    }
    if field.is_empty() {
        return Err(Error::Infeasible {
            gt: gt.len(),
            proposals: 0,
        });
    }
    let psi = gt
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0);
            for (j, &q) in field.positions.iter().enumerate() {
                let d = p.dist2(q);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    let cost = build_cost(gt, &field.positions, &field.confidences, tau)?;
    Ok(MatchResult::from_psi(psi, &cost))
}

/// Matched proposal of one ground-truth point on one probe image.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityEntry {
    pub image_id: String,
    pub gt_index: usize,
    pub proposal: ProposalId,
    pub position: Point,
}

/// Matches of every probe ground truth at the end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRecord {
    pub epoch: usize,
    pub entries: Vec<StabilityEntry>,
}

impl StabilityRecord {
    pub fn new(epoch: usize) -> Self {
        Self {
            epoch,
            entries: Vec::new(),
        }
    }

    /// Appends the matches of one image.
    pub fn push_image(&mut self, field: &ProposalField, matched: &MatchResult) {
        for (gt_index, &j) in matched.psi.iter().enumerate() {
            self.entries.push(StabilityEntry {
                image_id: field.image_id.clone(),
                gt_index,
                proposal: field.ids[j],
                position: field.positions[j],
            });
        }
    }

    fn keyed(&self) -> Result<BTreeMap<(&str, usize), &StabilityEntry>> {
        let mut map = BTreeMap::new();
        for e in &self.entries {
            if map.insert((e.image_id.as_str(), e.gt_index), e).is_some() {
                return Err(Error::Diagnostic(format!(
                    "epoch {} lists ({}, {}) twice",
                    self.epoch, e.image_id, e.gt_index
                )));
            }
        }
        Ok(map)
    }
}

/// Churn between two stability records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instability {
    /// Fraction of ground truths whose matched proposal changed.
    pub ir: f64,
    /// Mean distance between previous and current matched positions.
    pub avg_delta: f64,
}

/// Compares two records over the same probe ground truths. Entry order is
/// irrelevant.
pub fn instability_rate(prev: &StabilityRecord, curr: &StabilityRecord) -> Result<Instability> {
    let a = prev.keyed()?;
    let b = curr.keyed()?;
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Diagnostic(format!(
            "epochs {} and {} cover different probe ground truths",
            prev.epoch, curr.epoch
        )));
    }
    if a.is_empty() {
        return Ok(Instability {
            ir: 0.0,
            avg_delta: 0.0,
        });
    }
    let mut changed = 0usize;
    let mut moved = 0.0;
    for (x, y) in a.values().zip(b.values()) {
        if x.proposal != y.proposal {
            changed += 1;
        }
        moved += x.position.dist(y.position);
    }
    let n = a.len() as f64;
    Ok(Instability {
        ir: changed as f64 / n,
        avg_delta: moved / n,
    })
}
