use std::path::Path;

use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::metrics::{counting_metrics, infer_predictions, localization_metrics, CountingResult, LocalizationResult, SigmaSpec};
use crate::model::ProposalModel;
use crate::nn::Real;

use super::augment::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub image_id: String,
    pub gt_count: usize,
    pub pred_count: usize,
    /// One entry per configured fixed sigma.
    pub fixed: Vec<LocalizationResult>,
    pub boxed: Option<LocalizationResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sigmas: Vec<f64>,
    pub images: Vec<ImageEval>,
    pub counting: CountingResult,
    /// Counts pooled over all images, per fixed sigma.
    pub pooled: Vec<LocalizationResult>,
    pub pooled_box: Option<LocalizationResult>,
}

impl EvalReport {
    pub fn f1_at(&self, sigma: f64) -> Option<f64> {
        self.sigmas
            .iter()
            .position(|&s| s == sigma)
            .map(|i| self.pooled[i].f1)
    }
}

fn pool<'a>(items: impl Iterator<Item = &'a LocalizationResult>) -> LocalizationResult {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for r in items {
        tp += r.tp;
        fp += r.fp;
        fn_ += r.fn_;
    }
    LocalizationResult::from_counts(tp, tp + fp, tp + fn_)
}

pub fn evaluate<T: Real>(model: &ProposalModel<T>, samples: &[Sample], config: &EvalConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation needs at least one image".into()));
    }
    let mut images = Vec::with_capacity(samples.len());
    for s in samples {
        let field = model.propose(&s.image, &s.points.image_id)?;
        let preds = infer_predictions(&field, config.threshold);
        let gt = &s.points.points;
        let fixed = config
            .sigmas
            .iter()
            .map(|&sigma| localization_metrics(gt, &preds, &SigmaSpec::Fixed(sigma)))
            .collect::<Result<Vec<_>>>()?;
        let boxed = if config.box_sigma && s.points.boxes.len() == gt.len() {
            Some(localization_metrics(gt, &preds, &SigmaSpec::Boxes(s.points.boxes.clone()))?)
        } else {
            None
        };
        images.push(ImageEval {
            image_id: s.points.image_id.clone(),
            gt_count: gt.len(),
            pred_count: preds.len(),
            fixed,
            boxed,
        });
    }
    let pairs: Vec<(usize, usize)> = images.iter().map(|e| (e.gt_count, e.pred_count)).collect();
    let pooled = (0..config.sigmas.len())
        .map(|k| pool(images.iter().map(|e| &e.fixed[k])))
        .collect();
    let pooled_box = if config.box_sigma && images.iter().all(|e| e.boxed.is_some()) {
        Some(pool(images.iter().filter_map(|e| e.boxed.as_ref())))
    } else {
        None
    };
    Ok(EvalReport {
        sigmas: config.sigmas.clone(),
        counting: counting_metrics(&pairs)?,
        images,
        pooled,
        pooled_box,
    })
}

fn loc_fields(r: &LocalizationResult) -> [String; 4] {
    [r.tp.to_string(), r.fp.to_string(), r.fn_.to_string(), format!("{:.6}", r.f1)]
}

/// Per-image rows plus a `summary` row (totals, mean signed count error,
/// pooled counts), and a one-row `eval_summary.csv` next to it.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut header = vec![
        "image_id".to_string(),
        "gt_count".into(),
        "pred_count".into(),
        "error".into(),
    ];
    let mut labels: Vec<String> = report.sigmas.iter().map(|s| format!("s{s}")).collect();
    if report.pooled_box.is_some() {
        labels.push("box".into());
    }
    for l in &labels {
        for k in ["tp", "fp", "fn", "f1"] {
            header.push(format!("{k}_{l}"));
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_or_csv(path, e))?;
    w.write_record(&header)?;
    for e in &report.images {
        let mut row = vec![
            e.image_id.clone(),
            e.gt_count.to_string(),
            e.pred_count.to_string(),
            (e.pred_count as i64 - e.gt_count as i64).to_string(),
        ];
        for r in &e.fixed {
            row.extend(loc_fields(r));
        }
        if report.pooled_box.is_some() {
            row.extend(loc_fields(e.boxed.as_ref().expect("box results")));
        }
        w.write_record(&row)?;
    }
    let gt: usize = report.images.iter().map(|e| e.gt_count).sum();
    let pred: usize = report.images.iter().map(|e| e.pred_count).sum();
    let mut row = vec![
        "summary".to_string(),
        gt.to_string(),
        pred.to_string(),
        format!("{:.6}", report.counting.mean_signed_error),
    ];
    for r in report.pooled.iter().chain(&report.pooled_box) {
        row.extend(loc_fields(r));
    }
    w.write_record(&row)?;
    w.flush().map_err(|e| Error::io(path, e))?;

    let summary_path = path.with_file_name("eval_summary.csv");
    let mut s = csv::Writer::from_path(&summary_path).map_err(|e| io_or_csv(&summary_path, e))?;
    let mut head = vec!["images".to_string(), "mae".into(), "mse".into(), "mean_signed_error".into()];
    let mut vals = vec![
        report.images.len().to_string(),
        format!("{:.6}", report.counting.mae),
        format!("{:.6}", report.counting.mse),
        format!("{:.6}", report.counting.mean_signed_error),
    ];
    for (l, r) in labels.iter().zip(report.pooled.iter().chain(&report.pooled_box)) {
        head.extend([format!("precision_{l}"), format!("recall_{l}"), format!("f1_{l}")]);
        vals.extend([
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.f1),
        ]);
    }
    s.write_record(&head)?;
    s.write_record(&vals)?;
    s.flush().map_err(|e| Error::io(&summary_path, e))?;
    Ok(())
}

fn io_or_csv(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::Csv(e)
    }
}
