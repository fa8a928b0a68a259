use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::{sample_auxiliary, AuxiliarySet, LossBreakdown};
use crate::matching::{instability_rate, match_proposals, StabilityRecord};
use crate::model::{clamp_to_image, load_checkpoint, save_checkpoint, ProposalModel};
use crate::nn::{Adam, AdamConfig, Gradients, Real};
use crate::scene::Point;

use super::artifacts::{CsvLog, IrRow, IR_HEADER, LOSS_HEADER, STABILITY_HEADER};
use super::augment::{augment_with, sample_params, Sample};
use super::data::Dataset;
use super::evaluate::{evaluate, write_eval_csv, EvalReport};
use super::objective::image_objective;

/// What a finished run produced, besides the files in its directory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub steps: usize,
    /// Mean loss over the steps of the last epoch.
    pub last_epoch_loss: Option<LossBreakdown>,
    pub ir: Vec<IrRow>,
    pub eval: Option<EvalReport>,
}

impl RunSummary {
    /// Mean IR and Avg. Δ over the last `n` probe comparisons.
    pub fn tail_instability(&self, n: usize) -> Option<(f64, f64)> {
        let tail = &self.ir[self.ir.len().saturating_sub(n)..];
        if tail.is_empty() {
            return None;
        }
        let k = tail.len() as f64;
        Some((
            tail.iter().map(|r| r.ir).sum::<f64>() / k,
            tail.iter().map(|r| r.avg_delta).sum::<f64>() / k,
        ))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed ^ tag).wrapping_add(a)).wrapping_add(b)))
}

const ORDER: u64 = 0x6f72_6465_72;
const SAMPLE: u64 = 0x7361_6d70_6c65;

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch}.json"))
}

/// Builds the dataset described by `config` and trains on it.
pub fn train(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let data = Dataset::build(config)?;
    train_with_data(config, &data, out_dir)
}

fn probe<T: Real>(model: &ProposalModel<T>, samples: &[Sample], tau: f64, epoch: usize) -> Result<StabilityRecord> {
    let mut record = StabilityRecord::new(epoch);
    for s in samples {
        let field = model.propose(&s.image, &s.points.image_id)?;
        let matched = match_proposals(&s.points.points, &field, tau)?;
        record.push_image(&field, &matched);
    }
    Ok(record)
}

fn load_pretrained(model: &mut ProposalModel<f32>, path: &Path) -> Result<()> {
    let ckpt = load_checkpoint(path)?;
    let mut loaded = 0;
    for t in ckpt.tensors.iter().filter(|t| t.name.starts_with("encoder.")) {
        model.params_mut().assign(&t.name, t.shape, &t.data)?;
        loaded += 1;
    }
    if loaded == 0 {
        return Err(Error::Checkpoint(format!("{} has no encoder tensors", path.display())));
    }
    Ok(())
}

/// Trains on an explicit dataset, writing every artifact under `out_dir`.
pub fn train_with_data(config: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let tc = &config.train;
    if data.train.is_empty() && tc.epochs > 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let echo = config.to_toml();
    let echo_path = out_dir.join("config.toml");
    std::fs::write(&echo_path, &echo).map_err(|e| Error::io(&echo_path, e))?;

    let mut model = ProposalModel::<f32>::new(config.model.clone(), config.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: tc.lr,
            ..AdamConfig::default()
        },
        model.params().len(),
    );
    if let Some(path) = &tc.pretrained_encoder {
        load_pretrained(&mut model, path)?;
        let ids: Vec<_> = model
            .params()
            .entries()
            .iter()
            .filter(|e| e.name.starts_with("encoder."))
            .map(|e| e.id.range())
            .collect();
        for r in ids {
            adam.set_lr(r, tc.encoder_lr);
        }
    }
    save_checkpoint(&checkpoint_path(out_dir, 0), &model, 0, Some(echo.clone()))?;

    let mut losses = CsvLog::create(&out_dir.join("losses.csv"), LOSS_HEADER)?;
    let mut stability = CsvLog::create(&out_dir.join("stability.csv"), STABILITY_HEADER)?;
    let mut ir_log = CsvLog::create(&out_dir.join("ir.csv"), IR_HEADER)?;
    let augment = tc.augment();
    let weights = tc.loss;
    let mut grads: Gradients<f32> = model.params().zero_grads();
    let mut prev: Option<StabilityRecord> = None;
    let mut ir = Vec::new();
    let mut step = 0;
    let mut last_epoch_loss = None;

    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut stream(config.seed, ORDER, epoch as u64, 0));
        let mut epoch_loss = LossBreakdown::default();
        let n_batches = order.len().div_ceil(tc.batch_size);
        for batch in order.chunks(tc.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = LossBreakdown::default();
            for &idx in batch {
                let mut rng = stream(config.seed, SAMPLE, epoch as u64, idx as u64);
                let src = &data.train[idx];
                let params = sample_params(&mut rng, src.image.height, src.image.width, &augment);
                let sample = augment_with(src, &params, augment.crop);
                let gt = &sample.points.points;
                let aux = if tc.strategy.uses_apg() {
                    sample_auxiliary(gt, &tc.aux, &mut rng)?
                } else {
                    AuxiliarySet::default()
                };
                let queries: Vec<Point> = aux
                    .points()
                    .map(|p| clamp_to_image(p, sample.image.height, sample.image.width))
                    .collect();
                let pass = model.forward(&sample.image, &sample.points.image_id, &queries)?;
                let obj = image_objective(
                    tc.strategy,
                    gt,
                    &pass.field,
                    &aux,
                    &pass.aux,
                    &weights,
                    tc.aux.positive_target,
                )?;
                let d_conf: Vec<f64> = obj.d_conf.iter().map(|g| g * scale).collect();
                let d_offset: Vec<[f64; 2]> = obj.d_offset.iter().map(|g| [g[0] * scale, g[1] * scale]).collect();
                model.backward(&pass, &d_conf, &d_offset, &mut grads)?;
                batch_loss.add_scaled(&obj.breakdown, scale);
            }
            let batch_loss = batch_loss.checked()?;
            if !grads.all_finite() {
                return Err(Error::NonFinite("parameter gradients".into()));
            }
            adam.step(model.params_mut(), &grads);
            grads.clear();
            step += 1;
            losses.loss(epoch, step, &batch_loss)?;
            epoch_loss.add_scaled(&batch_loss, 1.0 / n_batches as f64);
        }
        last_epoch_loss = Some(epoch_loss);
        log::info!(
            "epoch {epoch}/{}: l_overall {:.5} (l_point {:.5}, l_apg {:.5})",
            tc.epochs,
            epoch_loss.l_overall,
            epoch_loss.l_point,
            epoch_loss.l_apg
        );

        if epoch % tc.probe_interval == 0 && !data.probe.is_empty() {
            let record = probe(&model, &data.probe, weights.tau, epoch)?;
            stability.stability(&record)?;
            if let Some(p) = &prev {
                let v = instability_rate(p, &record)?;
                ir_log.ir(epoch, &v)?;
                ir.push(IrRow {
                    epoch,
                    ir: v.ir,
                    avg_delta: v.avg_delta,
                });
            }
            prev = Some(record);
        }
        if epoch % tc.checkpoint_interval == 0 || epoch == tc.epochs {
            save_checkpoint(&checkpoint_path(out_dir, epoch), &model, epoch, Some(echo.clone()))?;
        }
    }
    losses.flush()?;
    stability.flush()?;
    ir_log.flush()?;

    let eval = if data.test.is_empty() {
        None
    } else {
        let report = evaluate(&model, &data.test, &config.eval)?;
        write_eval_csv(&out_dir.join("eval.csv"), &report)?;
        Some(report)
    };
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        epochs: tc.epochs,
        steps: step,
        last_epoch_loss,
        ir,
        eval,
    })
}
