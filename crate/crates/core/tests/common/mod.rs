//! Independent oracles shared by the integration tests and the acceptance
//! target. Nothing here calls into the code it checks except to obtain
//! the values being compared.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdpoint::losses::{
    loss_apg_neg, loss_apg_pos, loss_cls, loss_loc, sample_auxiliary_seeded, AuxConfig, AuxPoint, AuxiliarySet,
    LossBreakdown, LossWeights, PositiveTarget,
};
use crowdpoint::matching::{hungarian, match_proposals, CostMatrix};
use crowdpoint::metrics::{counting_metrics, localization_metrics, SigmaSpec};
use crowdpoint::model::{
    clamp_to_image, offset_position, AuxPrediction, IfiVariant, Interpolator, Lattice, ModelConfig,
    PositionalEncoding, ProposalModel,
};
use crowdpoint::nn::{FeatureMap, ParamStore};
use crowdpoint::scene::{generate_scene, Point, SceneGenConfig};

// ---------------------------------------------------------------- matching

/// Minimum total over every injective row -> column map.
pub fn brute_force_min(cost: &CostMatrix) -> f64 {
    fn rec(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.rows {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.cols {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost.at(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.cols], 0.0, &mut best);
    if cost.rows == 0 {
        0.0
    } else {
        best
    }
}

/// Random `n x m` matrix with entries `k / 256`, `k` in `[-512, 512]`, so
/// every partial sum is exact in `f64`.
pub fn dyadic_matrix<R: Rng>(rng: &mut R, n: usize, m: usize) -> CostMatrix {
    CostMatrix::from_fn(n, m, |_, _| rng.gen_range(-512i32..=512) as f64 / 256.0)
}

pub struct MatchingOracle {
    pub instances: usize,
    pub mismatches: usize,
    pub invalid: usize,
}

/// Hungarian totals against exhaustive enumeration for `count` random
/// matrices with `N <= 5`, `N <= M <= 7`.
pub fn matching_oracle(count: usize, seed: u64) -> MatchingOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MatchingOracle {
        instances: 0,
        mismatches: 0,
        invalid: 0,
    };
    for _ in 0..count {
        let n = rng.gen_range(0..=5);
        let m = rng.gen_range(n.max(1)..=7);
        let cost = dyadic_matrix(&mut rng, n, m);
        let psi = hungarian(&cost).expect("finite matrix");
        let mut seen = vec![false; m];
        let injective = psi.len() == n && psi.iter().all(|&j| j < m && !std::mem::replace(&mut seen[j], true));
        if !injective {
            out.invalid += 1;
        } else if cost.total(&psi) != brute_force_min(&cost) {
            out.mismatches += 1;
        }
        out.instances += 1;
    }
    out
}

// ---------------------------------------------------------------- metrics

/// Largest one-to-one pairing with every pair within `sigma`, by
/// exhaustive search.
pub fn brute_force_tp(gt: &[Point], preds: &[Point], sigma: f64) -> usize {
    fn rec(gt: &[Point], preds: &[Point], sigma: f64, i: usize, used: &mut Vec<bool>) -> usize {
        if i == gt.len() {
            return 0;
        }
        let mut best = rec(gt, preds, sigma, i + 1, used);
        for j in 0..preds.len() {
            if !used[j] && gt[i].dist(preds[j]) <= sigma {
                used[j] = true;
                best = best.max(1 + rec(gt, preds, sigma, i + 1, used));
                used[j] = false;
            }
        }
        best
    }
    rec(gt, preds, sigma, 0, &mut vec![false; preds.len()])
}

pub struct MetricsOracle {
    pub instances: usize,
    pub tp_mismatches: usize,
    pub monotonicity_violations: usize,
}

fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(rng.gen_range(0.0..24.0), rng.gen_range(0.0..24.0)))
        .collect()
}

/// TP counts against brute force at several thresholds, and monotonicity
/// of TP, recall and precision in sigma.
pub fn metrics_oracle(count: usize, seed: u64) -> MetricsOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigmas = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let mut out = MetricsOracle {
        instances: 0,
        tp_mismatches: 0,
        monotonicity_violations: 0,
    };
    for _ in 0..count {
        let n = rng.gen_range(0..=5);
        let m = rng.gen_range(0..=5);
        let gt = random_points(&mut rng, n);
        let preds = random_points(&mut rng, m);
        let mut prev_tp = 0;
        for &s in &sigmas {
            let r = localization_metrics(&gt, &preds, &SigmaSpec::Fixed(s)).expect("valid instance");
            if r.tp != brute_force_tp(&gt, &preds, s) {
                out.tp_mismatches += 1;
            }
            if r.tp < prev_tp {
                out.monotonicity_violations += 1;
            }
            prev_tp = r.tp;
        }
        out.instances += 1;
    }
    out
}

// ---------------------------------------------------------------- sampling

/// Two-sided one-sample Kolmogorov-Smirnov statistic against `U[lo, hi]`.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

pub struct SamplingLaw {
    pub components: usize,
    pub positive_support_violations: usize,
    pub negative_support_violations: usize,
    pub positive_ks: f64,
    pub negative_magnitude_ks: f64,
    pub negative_plus_fraction: f64,
    pub critical: f64,
}

impl SamplingLaw {
    pub fn passes(&self) -> bool {
        self.positive_support_violations == 0
            && self.negative_support_violations == 0
            && self.positive_ks < self.critical
            && self.negative_magnitude_ks < self.critical
            && (self.negative_plus_fraction - 0.5).abs() <= 0.01
    }
}

/// Draws `components` offset components of each kind through the full
/// auxiliary sampler.
pub fn sampling_law(components: usize, seed: u64) -> SamplingLaw {
    let config = AuxConfig::default();
    let (n_pos, n_neg) = (config.n_pos, config.n_neg);
    // Two points per ground truth, two components per point.
    let gt: Vec<Point> = (0..components / 4).map(|i| Point::new(i as f64, 0.0)).collect();
    let set = sample_auxiliary_seeded(&gt, &config, seed).expect("valid config");
    let pos: Vec<f64> = set.positives.iter().flat_map(|a| a.offset).collect();
    let neg: Vec<f64> = set.negatives.iter().flat_map(|a| a.offset).collect();
    let mags: Vec<f64> = neg.iter().map(|v| v.abs()).collect();
    SamplingLaw {
        components: pos.len().min(neg.len()),
        positive_support_violations: pos.iter().filter(|v| v.abs() > n_pos).count(),
        negative_support_violations: neg.iter().filter(|v| v.abs() < n_pos || v.abs() > n_neg).count(),
        positive_ks: ks_uniform(&pos, -n_pos, n_pos),
        negative_magnitude_ks: ks_uniform(&mags, n_pos, n_neg),
        negative_plus_fraction: neg.iter().filter(|v| **v > 0.0).count() as f64 / neg.len() as f64,
        critical: ks_critical_01(pos.len().min(neg.len())),
    }
}

// ---------------------------------------------------------------- gradients

pub fn tiny_model_config(variant: IfiVariant, dilated: bool) -> ModelConfig {
    ModelConfig {
        encoder_channels: [3, 4, 5],
        dilated_block: dilated,
        ifi_variant: variant,
        ifi_hidden: 6,
        ifi_out: 4,
        encoding: PositionalEncoding { n_freqs: 2, base: 2.0 },
        head_hidden: vec![8, 6],
        ..ModelConfig::default()
    }
}

pub const TERMS: [&str; 4] = ["l_cls", "l_loc", "l_apg_pos", "l_apg_neg"];

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub term: &'static str,
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// Relative error with an absolute floor for gradients that vanish.
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-6)
    }
}

struct Instance {
    model: ProposalModel<f64>,
    image: crowdpoint::scene::Image,
    gt: Vec<Point>,
    aux: AuxiliarySet,
    queries: Vec<Point>,
    psi: Vec<usize>,
    positives: Vec<usize>,
    weights: LossWeights,
    target: PositiveTarget,
}

impl Instance {
    /// Value and per-query gradients of one loss term at the current
    /// parameters, with the assignment held fixed.
    fn term(&self, model: &ProposalModel<f64>, t: usize) -> (f64, Vec<f64>, Vec<[f64; 2]>, crowdpoint::model::ForwardPass<f64>) {
        let pass = model.forward(&self.image, "g", &self.queries).expect("forward");
        let m = pass.field.len();
        let q = m + pass.aux.len();
        let n_pos = self.aux.positives.len();
        let mut d_conf = vec![0.0; q];
        let mut d_off = vec![[0.0; 2]; q];
        let w = &self.weights;
        let (value, range, term) = match t {
            0 => {
                let term = loss_cls(&pass.field.confidences, &self.positives, w.lambda1);
                (term.value, 0..m, term)
            }
            1 => {
                let term = loss_loc(&self.gt, &pass.field.positions, &self.psi, pass.field.gamma);
                (term.value, 0..m, term)
            }
            2 => {
                let term = loss_apg_pos(&self.gt, &self.aux, &pass.aux[..n_pos], w.lambda3, self.target, pass.field.gamma);
                (term.value, m..m + n_pos, term)
            }
            _ => {
                let term = loss_apg_neg(self.gt.len(), &self.aux, &pass.aux[n_pos..], w.lambda4);
                (term.value, m + n_pos..q, term)
            }
        };
        for (k, i) in range.enumerate() {
            d_conf[i] = term.d_conf[k];
            d_off[i] = term.d_offset[k];
        }
        (value, d_conf, d_off, pass)
    }
}

/// Gradients of the four loss terms with respect to model parameters
/// (encoder, both interpolators and the head) against central
/// differences. Two random coordinates of every parameter tensor are
/// checked per term.
pub fn gradient_instance(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let variant = IfiVariant::ALL[(seed % 5) as usize];
    let model = ProposalModel::<f64>::new(tiny_model_config(variant, seed % 2 == 0), seed).expect("model");
    let scene = generate_scene(
        &SceneGenConfig {
            image_size: 32,
            n_min: 1,
            n_max: 4,
            ..SceneGenConfig::default()
        },
        seed,
    )
    .expect("scene");
    let gt = scene.annotations.points.clone();
    let aux = sample_auxiliary_seeded(&gt, &AuxConfig::default(), seed).expect("aux");
    let queries: Vec<Point> = aux.points().map(|p| clamp_to_image(p, 32, 32)).collect();
    let weights = LossWeights::default();
    let field = model.propose(&scene.image, "g").expect("propose");
    let matched = match_proposals(&gt, &field, weights.tau).expect("match");
    let inst = Instance {
        model,
        image: scene.image,
        gt,
        aux,
        queries,
        psi: matched.psi,
        positives: matched.positives,
        weights,
        target: if seed % 3 == 0 {
            PositiveTarget::RawOffset
        } else {
            PositiveTarget::Position
        },
    };

    let entries = inst.model.params().entries().to_vec();
    let h = 1e-5;
    let mut out = Vec::new();
    for t in 0..TERMS.len() {
        let (_, d_conf, d_off, pass) = inst.term(&inst.model, t);
        let mut grads = inst.model.params().zero_grads();
        inst.model.backward(&pass, &d_conf, &d_off, &mut grads).expect("backward");
        for e in &entries {
            for _ in 0..2 {
                let k = e.id.range().start + rng.gen_range(0..e.id.len());
                let mut plus = inst.model.clone();
                plus.params_mut().data_mut()[k] += h;
                let mut minus = inst.model.clone();
                minus.params_mut().data_mut()[k] -= h;
                let numeric = (inst.term(&plus, t).0 - inst.term(&minus, t).0) / (2.0 * h);
                out.push(GradCheck {
                    term: TERMS[t],
                    param: format!("{}[{}]", e.name, k - e.id.range().start),
                    analytic: grads.data()[k],
                    numeric,
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------- interpolation

pub fn random_grid<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize) -> FeatureMap<f64> {
    FeatureMap::new(h, w, Array2::from_shape_fn((h * w, c), |_| rng.gen_range(-1.0..1.0)))
}

pub fn interpolator(variant: IfiVariant, channels: usize, seed: u64) -> (ParamStore<f64>, Interpolator) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ifi = Interpolator::new(
        &mut store,
        "ifi",
        variant,
        channels,
        8,
        4,
        PositionalEncoding::default(),
        &mut rng,
    );
    (store, ifi)
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest `|sum of weights - 1|` and smallest weight over random queries
/// on a 16x16 lattice of stride 8.
pub fn partition_of_unity(queries: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = Lattice::new(16, 16, 8);
    let (mut worst, mut min_weight) = (0.0f64, f64::INFINITY);
    for _ in 0..queries {
        let p = Point::new(rng.gen_range(0.0..=128.0), rng.gen_range(0.0..=128.0));
        let n = lattice.neighbors(p).expect("inside");
        worst = worst.max((n.iter().map(|n| n.weight).sum::<f64>() - 1.0).abs());
        min_weight = n.iter().map(|n| n.weight).fold(min_weight, f64::min);
    }
    (worst, min_weight)
}

/// Largest deviation of the bilinear variant from the stored feature when
/// queried exactly at each lattice node.
pub fn bilinear_node_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (store, ifi) = interpolator(IfiVariant::Bilinear, 5, seed);
    let grid = random_grid(&mut rng, 4, 6, 5);
    let mut worst: f64 = 0.0;
    for r in 0..4 {
        for c in 0..6 {
            let p = Point::new((c as f64 + 0.5) * 8.0, (r as f64 + 0.5) * 8.0);
            let out = ifi.query(&store, &grid, 8, p).expect("query");
            worst = worst.max(norm_diff(&out, &grid.at(r, c).to_vec()));
        }
    }
    worst
}

/// Lipschitz bound per pixel for the continuity sweep. The top encoding
/// frequency alone contributes `2^7 pi / 8 ~ 50` per pixel at stride 8;
/// a jump of size `J` shows up as `J * 1e4`.
pub const CONTINUITY_L: f64 = 500.0;

/// Largest `|f(q + eps d) - f(q)| / eps` over random interior queries,
/// unit directions and `eps` in {1e-3, 1e-4}.
pub fn continuity_ratio(variant: IfiVariant, queries: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (store, ifi) = interpolator(variant, 3, seed);
    let stride = 8;
    let grid = random_grid(&mut rng, 4, 5, 3);
    let (w, h) = (40.0, 32.0);
    let mut worst: f64 = 0.0;
    for _ in 0..queries {
        let q = Point::new(rng.gen_range(1.0..w - 1.0), rng.gen_range(1.0..h - 1.0));
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let base = ifi.query(&store, &grid, stride, q).expect("query");
        for eps in [1e-3, 1e-4] {
            let p = Point::new(q.x + eps * a.cos(), q.y + eps * a.sin());
            let moved = ifi.query(&store, &grid, stride, p).expect("query");
            worst = worst.max(norm_diff(&base, &moved) / eps);
        }
    }
    worst
}

/// Distance between the output at a lattice node and at points
/// approaching it from distance 1 px down to 1e-3 px.
pub fn node_approach(variant: IfiVariant, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (store, ifi) = interpolator(variant, 3, seed);
    let grid = random_grid(&mut rng, 4, 5, 3);
    // Node (row 1, col 2) sits at pixel (20, 12) for stride 8.
    let node = Point::new(20.0, 12.0);
    let at = ifi.query(&store, &grid, 8, node).expect("query");
    [1.0, 1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&d| {
            let p = Point::new(node.x + d * 0.6, node.y + d * 0.8);
            norm_diff(&at, &ifi.query(&store, &grid, 8, p).expect("query"))
        })
        .collect()
}

// ------------------------------------------------------------- hand values

pub const HAND_TOL: f64 = 1e-6;

/// A worked example: what the code returned and what it should be.
pub struct HandValue {
    pub name: &'static str,
    pub got: f64,
    pub expected: f64,
}

impl HandValue {
    pub fn ok(&self) -> bool {
        (self.got - self.expected).abs() < HAND_TOL
    }
}

fn aux_pred(query: Point, confidence: f64, offset: [f64; 2]) -> AuxPrediction {
    AuxPrediction {
        query,
        confidence,
        offset,
        position: offset_position(query, offset, 100.0),
    }
}

fn aux_point(gt_index: usize, point: Point) -> AuxPoint {
    AuxPoint {
        gt_index,
        offset: [0.0, 0.0],
        point,
    }
}

pub fn hand_values() -> Vec<HandValue> {
    let mut v = Vec::new();
    let mut push = |name, got, expected| v.push(HandValue { name, got, expected });

    push("proposal x", offset_position(Point::new(10.0, 0.0), [0.03, 0.0], 100.0).x, 13.0);
    push("l_cls symmetric pair", loss_cls(&[0.5, 0.5], &[0], 0.5).value, 0.519860);

    let gt = [Point::new(0.0, 0.0)];
    push("l_loc single", loss_loc(&gt, &[Point::new(3.0, 4.0)], &[0], 100.0).value, 25.0);
    let gt2 = [Point::new(0.0, 0.0), Point::new(5.0, 5.0)];
    let pos = [Point::new(3.0, 4.0), Point::new(5.0, 5.0)];
    push("l_loc pair", loss_loc(&gt2, &pos, &[0, 1], 100.0).value, 12.5);

    // Query at (1, 1) with zero offset sits 2 px from the ground truth.
    let aux = AuxiliarySet {
        k_pos: 1,
        k_neg: 0,
        positives: vec![aux_point(0, Point::new(1.0, 1.0))],
        negatives: vec![],
    };
    let preds = [aux_pred(Point::new(1.0, 1.0), 0.5, [0.0, 0.0])];
    let t = loss_apg_pos(&[Point::new(1.0, 3.0)], &aux, &preds, 2e-4, PositiveTarget::Position, 100.0);
    push("l_apg_pos", t.value, 0.693947);

    let one = AuxiliarySet {
        k_pos: 0,
        k_neg: 1,
        positives: vec![],
        negatives: vec![aux_point(0, Point::new(5.0, 0.0))],
    };
    let p = aux_pred(Point::new(5.0, 0.0), 0.5, [1.0, 0.0]);
    push("l_apg_neg", loss_apg_neg(1, &one, &[p], 2e-4).value, 0.693347);

    match LossBreakdown::assemble(1.0, 0.0, 0.25, 0.25, &LossWeights::default()) {
        Ok(b) => {
            push("l_point", b.l_point, 1.0);
            push("l_overall", b.l_overall, 1.1);
        }
        Err(_) => push("l_overall", f64::NAN, 1.1),
    }

    let (mae, mse) = counting_metrics(&[(10, 12), (20, 17)]).map_or((f64::NAN, f64::NAN), |r| (r.mae, r.mse));
    push("mae", mae, 2.5);
    push("mse", mse, 2.549510);

    let pred = [Point::new(3.0, 4.0)];
    for (sigma, f1) in [(4.0, 0.0), (8.0, 1.0)] {
        let got = localization_metrics(&gt, &pred, &SigmaSpec::Fixed(sigma)).map_or(f64::NAN, |r| r.f1);
        push(if sigma == 4.0 { "f1 at 4" } else { "f1 at 8" }, got, f1);
    }
    v
}
