//! Training loop, augmentation, target selection and run artifacts.

mod artifacts;
mod augment;
mod data;
mod evaluate;
mod objective;
mod runner;
mod sweep;

pub use artifacts::{read_ir_csv, read_stability_csv, IrRow, IR_HEADER, LOSS_HEADER, STABILITY_HEADER};
pub use augment::{
    augment_with, center_crop, min_scale, resize, sample_params, scaled_size, AugmentConfig, AugmentParams,
    Sample,
};
pub use data::{load_samples, synthetic_split, Dataset, Split};
pub use evaluate::{evaluate, write_eval_csv, EvalReport, ImageEval};
pub use objective::{image_objective, select_targets, ImageObjective};
pub use runner::{checkpoint_path, train, train_with_data, RunSummary};
pub use sweep::{run_setting, write_sweep_csv, Axis, Setting, SweepRow};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AuxConfig, LossWeights};

/// How proposals are supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Optimal one-to-one matching, point loss only.
    Matcher,
    /// Every ground truth claims its nearest proposal, point loss only.
    NearestPoint,
    /// Auxiliary point losses only.
    ApgOnly,
    /// Optimal matching plus auxiliary point guidance.
    MatcherApg,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Matcher,
        Strategy::NearestPoint,
        Strategy::ApgOnly,
        Strategy::MatcherApg,
    ];

    pub fn uses_apg(self) -> bool {
        matches!(self, Strategy::ApgOnly | Strategy::MatcherApg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Matcher => "matcher",
            Strategy::NearestPoint => "nearest_point",
            Strategy::ApgOnly => "apg_only",
            Strategy::MatcherApg => "matcher_apg",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Encoder learning rate, used only together with `pretrained_encoder`.
    pub encoder_lr: f64,
    /// Checkpoint whose `encoder.*` tensors initialize the encoder.
    pub pretrained_encoder: Option<PathBuf>,
    pub crop: usize,
    pub scale_range: [f64; 2],
    pub flip_prob: f64,
    pub loss: LossWeights,
    pub aux: AuxConfig,
    /// Epochs between probe-set evaluations.
    pub probe_interval: usize,
    /// Epochs between checkpoints; the first and last epoch are always kept.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::MatcherApg,
            epochs: 150,
            batch_size: 8,
            lr: 1e-4,
            encoder_lr: 1e-5,
            pretrained_encoder: None,
            crop: 128,
            scale_range: [0.7, 1.3],
            flip_prob: 0.5,
            loss: LossWeights::default(),
            aux: AuxConfig::default(),
            probe_interval: 1,
            checkpoint_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("train.batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.encoder_lr > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.crop == 0 || self.crop % 8 != 0 {
            return fail("train.crop must be a positive multiple of 8");
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return fail("train.scale_range must satisfy 0 < low <= high");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return fail("train.flip_prob must lie in [0, 1]");
        }
        if self.probe_interval == 0 || self.checkpoint_interval == 0 {
            return fail("train.probe_interval and train.checkpoint_interval must be positive");
        }
        self.loss.validate()?;
        self.aux.validate()
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            crop: self.crop,
            scale_range: self.scale_range,
            flip_prob: self.flip_prob,
        }
    }
}
