use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crowdpoint::config::ExperimentConfig;
use crowdpoint::model::load_checkpoint;
use crowdpoint::scene::{save_png, write_annotations, PointSet};
use crowdpoint::train::{self, synthetic_split, write_sweep_csv, Axis, Dataset, Split};

mod report;

#[derive(Parser)]
#[command(name = "crowdpoint", version, about = "Point-proposal crowd counting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.epochs=20`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for training and synthetic data (`seed` and `data.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
            overrides.push(format!("data.seed={s}"));
        }
        Ok(ExperimentConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Probe,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes as PNG images plus an annotation file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Number of scenes; defaults to the configured split size.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one model and write its run directory.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every setting of one ablation axis and tabulate the results.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// strategy, aux_counts, randomness_range or ifi_variant.
        #[arg(long)]
        axis: String,
        /// Comma-separated seeds; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Plot per-epoch IR of several runs and merge their stability logs.
    StabilityReport {
        /// Run directories containing `stability.csv`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

fn prepare_out(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty {
            if !overwrite {
                bail!("output directory {} is not empty (pass --overwrite to replace it)", dir.display());
            }
            std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_echo(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(common: &Common, split: SplitArg, count: Option<usize>) -> Result<()> {
    let config = common.resolve()?;
    let (split, default) = match split {
        SplitArg::Train => (Split::Train, config.data.train_scenes),
        SplitArg::Probe => (Split::Probe, config.data.probe_scenes),
        SplitArg::Test => (Split::Test, config.data.test_scenes),
    };
    prepare_out(&common.out, common.overwrite)?;
    let samples = synthetic_split(&config.scene, config.data.seed, split, count.unwrap_or(default))?;
    let images = common.out.join("images");
    std::fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    for s in &samples {
        save_png(&s.image, &images.join(format!("{}.png", s.points.image_id)))?;
    }
    let sets: Vec<&PointSet> = samples.iter().map(|s| &s.points).collect();
    write_annotations(&common.out.join("annotations.txt"), sets)?;
    write_echo(&common.out, &config)?;
    println!("wrote {} scenes to {}", samples.len(), common.out.display());
    Ok(())
}

fn run_train(common: &Common) -> Result<()> {
    let config = common.resolve()?;
    prepare_out(&common.out, common.overwrite)?;
    let s = train::train(&config, &common.out)?;
    print!("trained {} epochs ({} steps)", s.epochs, s.steps);
    if let Some(e) = &s.eval {
        print!("; test MAE {:.3}, MSE {:.3}", e.counting.mae, e.counting.mse);
    }
    if let Some((ir, _)) = s.tail_instability(10) {
        print!("; final IR {ir:.4}");
    }
    println!();
    Ok(())
}

fn run_eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    // The checkpoint's own config echo is the base unless a file is given.
    let mut config = match (&common.config, &ckpt.config) {
        (None, Some(text)) => {
            let mut table: toml::Table = text.parse().context("checkpoint config echo")?;
            for o in &common.overrides {
                crowdpoint::config::apply_override(&mut table, o)?;
            }
            ExperimentConfig::from_toml(&toml::to_string(&table)?)?
        }
        _ => common.resolve()?,
    };
    if let Some(s) = common.seed {
        config.seed = s;
        config.data.seed = s;
    }
    config.model = ckpt.model.clone();
    config.validate()?;
    let model = ckpt.to_model::<f32>()?;
    prepare_out(&common.out, common.overwrite)?;
    write_echo(&common.out, &config)?;
    let test = Dataset::build_test(&config)?;
    let report = train::evaluate(&model, &test, &config.eval)?;
    train::write_eval_csv(&common.out.join("eval.csv"), &report)?;
    print!(
        "{} images: MAE {:.3}, MSE {:.3}, mean signed error {:.3}",
        report.images.len(),
        report.counting.mae,
        report.counting.mse,
        report.counting.mean_signed_error
    );
    for (s, r) in report.sigmas.iter().zip(&report.pooled) {
        print!(", F1@{s} {:.3}", r.f1);
    }
    println!();
    Ok(())
}

fn run_ablate(common: &Common, axis: &str, seeds: &[u64]) -> Result<()> {
    let axis: Axis = axis.parse()?;
    let base = common.resolve()?;
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds.to_vec() };
    prepare_out(&common.out, common.overwrite)?;
    write_echo(&common.out, &base)?;
    let mut rows = Vec::new();
    for setting in axis.settings() {
        for &seed in &seeds {
            log::info!("{} = {}, seed {seed}", axis.name(), setting.label);
            let row = train::run_setting(&base, &setting, seed, &common.out)
                .with_context(|| format!("setting {} seed {seed}", setting.label))?;
            rows.push(row);
        }
    }
    let path = common.out.join(format!("ablation_{}.csv", axis.name()));
    write_sweep_csv(&path, &base.eval.sigmas, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, split, count } => gen_data(&common, split, count),
        Command::Train { common } => run_train(&common),
        Command::Eval { common, checkpoint } => run_eval(&common, &checkpoint),
        Command::Ablate { common, axis, seeds } => run_ablate(&common, &axis, &seeds),
        Command::StabilityReport { runs, out, overwrite } => {
            prepare_out(&out, overwrite)?;
            report::stability_report(&runs, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
