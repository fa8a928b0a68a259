//! Ablation sweeps: named settings expressed as configuration overrides.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::IfiVariant;

use super::runner::{train, RunSummary};
use super::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Strategy,
    AuxCounts,
    RandomnessRange,
    IfiVariant,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Strategy, Axis::AuxCounts, Axis::RandomnessRange, Axis::IfiVariant];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Strategy => "strategy",
            Axis::AuxCounts => "aux_counts",
            Axis::RandomnessRange => "randomness_range",
            Axis::IfiVariant => "ifi_variant",
        }
    }

    pub fn settings(self) -> Vec<Setting> {
        match self {
            Axis::Strategy => Strategy::ALL
                .iter()
                .map(|s| Setting::new(s.name(), s.name(), vec![format!("train.strategy=\"{s}\"")]))
                .collect(),
            Axis::AuxCounts => [(0, 0), (1, 0), (2, 0), (1, 1), (2, 2), (5, 5)]
                .iter()
                .map(|(p, n)| {
                    Setting::new(
                        &format!("({p}, {n})"),
                        &format!("k{p}_{n}"),
                        vec![format!("train.aux.k_pos={p}"), format!("train.aux.k_neg={n}")],
                    )
                })
                .collect(),
            Axis::RandomnessRange => [(1, 4), (2, 8), (3, 12), (4, 16)]
                .iter()
                .map(|(p, n)| {
                    Setting::new(
                        &format!("({p}, {n})"),
                        &format!("r{p}_{n}"),
                        vec![format!("train.aux.n_pos={p}.0"), format!("train.aux.n_neg={n}.0")],
                    )
                })
                .collect(),
            Axis::IfiVariant => IfiVariant::ALL
                .iter()
                .map(|v| Setting::new(v.name(), v.name(), vec![format!("model.ifi_variant=\"{}\"", v.name())]))
                .collect(),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown ablation axis `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    /// Label for result tables.
    pub label: String,
    /// Directory-safe name.
    pub slug: String,
    pub overrides: Vec<String>,
}

impl Setting {
    fn new(label: &str, slug: &str, overrides: Vec<String>) -> Self {
        Self {
            label: label.to_string(),
            slug: slug.to_string(),
            overrides,
        }
    }

    /// `base` with this setting's overrides and the seed applied to both
    /// training randomness and the synthetic data.
    pub fn apply(&self, base: &ExperimentConfig, seed: u64) -> Result<ExperimentConfig> {
        let mut table: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        for o in self.overrides.iter().cloned().chain([format!("seed={seed}"), format!("data.seed={seed}")]) {
            crate::config::apply_override(&mut table, &o)?;
        }
        ExperimentConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)
    }
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub setting: String,
    pub seed: u64,
    pub mae: f64,
    pub mse: f64,
    pub mean_signed_error: f64,
    /// Pooled F1 per evaluation sigma, in configuration order.
    pub f1: Vec<f64>,
    /// Mean IR and Avg. Δ over all probe comparisons of the run.
    pub avg_ir: f64,
    pub avg_delta: f64,
    /// Mean IR over the final ten comparisons.
    pub final_ir: f64,
}

impl SweepRow {
    pub fn from_summary(setting: &str, seed: u64, s: &RunSummary) -> Result<Self> {
        let eval = s
            .eval
            .as_ref()
            .ok_or_else(|| Error::Config("run has no test set to evaluate".into()))?;
        let (avg_ir, avg_delta) = s.tail_instability(usize::MAX).unwrap_or((f64::NAN, f64::NAN));
        let final_ir = s.tail_instability(10).map_or(f64::NAN, |v| v.0);
        Ok(Self {
            setting: setting.to_string(),
            seed,
            mae: eval.counting.mae,
            mse: eval.counting.mse,
            mean_signed_error: eval.counting.mean_signed_error,
            f1: eval.pooled.iter().map(|r| r.f1).collect(),
            avg_ir,
            avg_delta,
            final_ir,
        })
    }
}

/// Trains `setting` for `seed` into `<out_dir>/<slug>/seed_<seed>`.
pub fn run_setting(base: &ExperimentConfig, setting: &Setting, seed: u64, out_dir: &Path) -> Result<SweepRow> {
    let config = setting.apply(base, seed)?;
    let dir = out_dir.join(&setting.slug).join(format!("seed_{seed}"));
    let summary = train(&config, &dir)?;
    SweepRow::from_summary(&setting.label, seed, &summary)
}

pub fn write_sweep_csv(path: &Path, sigmas: &[f64], rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["setting".to_string(), "seed".into(), "mae".into(), "mse".into(), "mean_signed_error".into()];
    header.extend(sigmas.iter().map(|s| format!("f1_s{s}")));
    header.extend(["avg_ir".to_string(), "avg_delta".into(), "final_ir".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.setting.clone(),
            r.seed.to_string(),
            format!("{:.6}", r.mae),
            format!("{:.6}", r.mse),
            format!("{:.6}", r.mean_signed_error),
        ];
        rec.extend(r.f1.iter().map(|v| format!("{v:.6}")));
        rec.extend([r.avg_ir, r.avg_delta, r.final_ir].iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::AuxConfig;

    #[test]
    fn axes_have_expected_sizes() {
        let sizes: Vec<usize> = Axis::ALL.iter().map(|a| a.settings().len()).collect();
        assert_eq!(sizes, vec![4, 6, 4, 5]);
        assert!("bogus".parse::<Axis>().unwrap_err().to_string().contains("aux_counts"));
    }

    #[test]
    fn settings_apply_cleanly() {
        let base = ExperimentConfig::default();
        for axis in Axis::ALL {
            for s in axis.settings() {
                let c = s.apply(&base, 7).unwrap();
                assert_eq!((c.seed, c.data.seed), (7, 7));
            }
        }
        let r = &Axis::RandomnessRange.settings()[3];
        let c = r.apply(&base, 0).unwrap();
        assert_eq!(
            c.train.aux,
            AuxConfig {
                n_pos: 4.0,
                n_neg: 16.0,
                ..AuxConfig::default()
            }
        );
        let v = &Axis::IfiVariant.settings()[2];
        assert_eq!(v.apply(&base, 0).unwrap().model.ifi_variant, IfiVariant::IfiSingleRef);
    }
}
