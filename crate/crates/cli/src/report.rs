use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use crowdpoint::config::ExperimentConfig;
use crowdpoint::matching::instability_rate;
use crowdpoint::train::{read_stability_csv, IrRow};

const WIDTH: u32 = 960;
const HEIGHT: u32 = 540;

const FONT_PATHS: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
    "/System/Library/Fonts/Supplemental/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

pub struct RunCurve {
    pub dir: PathBuf,
    pub label: String,
    pub rows: Vec<IrRow>,
}

/// IR of each probe epoch against the one before it. The first recorded
/// epoch has no predecessor and gets no point.
pub fn load_run(dir: &Path) -> Result<RunCurve> {
    let path = dir.join("stability.csv");
    if !path.is_file() {
        bail!("run {} has no stability.csv", dir.display());
    }
    let records = read_stability_csv(&path).with_context(|| format!("run {}", dir.display()))?;
    let mut rows = Vec::new();
    for pair in records.windows(2) {
        let v = instability_rate(&pair[0], &pair[1]).with_context(|| format!("run {}", dir.display()))?;
        rows.push(IrRow {
            epoch: pair[1].epoch,
            ir: v.ir,
            avg_delta: v.avg_delta,
        });
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let label = ExperimentConfig::load(&dir.join("config.toml"))
        .map(|c| c.train.strategy.to_string())
        .unwrap_or(name);
    Ok(RunCurve {
        dir: dir.to_path_buf(),
        label,
        rows,
    })
}

fn dedupe_labels(curves: &mut [RunCurve]) {
    let labels: Vec<String> = curves.iter().map(|c| c.label.clone()).collect();
    for c in curves.iter_mut() {
        if labels.iter().filter(|l| **l == c.label).count() > 1 {
            c.label = format!("{} ({})", c.label, c.dir.display());
        }
    }
}

fn register_font() -> bool {
    let env = std::env::var("CROWDPOINT_FONT").ok();
    for p in env.iter().map(String::as_str).chain(FONT_PATHS.iter().copied()) {
        if let Ok(bytes) = std::fs::read(p) {
            let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
            if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                return true;
            }
        }
    }
    false
}

fn plot(curves: &[RunCurve], path: &Path, text: bool) -> Result<()> {
    let mut buf = vec![0u8; (WIDTH * HEIGHT * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, (WIDTH, HEIGHT)).into_drawing_area();
        root.fill(&WHITE)?;
        let points = curves.iter().flat_map(|c| &c.rows);
        let x_max = points.clone().map(|r| r.epoch).max().unwrap_or(2).max(2) as f64;
        let y_max = points.map(|r| r.ir).fold(0.0, f64::max).max(0.05) * 1.05;
        let mut builder = ChartBuilder::on(&root);
        builder.margin(16);
        if text {
            builder
                .caption("Instability rate per epoch", ("sans-serif", 24))
                .x_label_area_size(40)
                .y_label_area_size(56);
        }
        let mut chart = builder.build_cartesian_2d(1.0..x_max, 0.0..y_max)?;
        let mut mesh = chart.configure_mesh();
        if text {
            mesh.x_desc("epoch").y_desc("IR");
        } else {
            mesh.disable_x_axis().disable_y_axis();
        }
        mesh.draw()?;
        for (i, c) in curves.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let series = chart.draw_series(LineSeries::new(
                c.rows.iter().map(|r| (r.epoch as f64, r.ir)),
                color.stroke_width(2),
            ))?;
            if text {
                series
                    .label(c.label.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            }
        }
        if text {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()?;
        }
        root.present()?;
    }
    let img = image::RgbImage::from_raw(WIDTH, HEIGHT, buf).context("plot buffer size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn stability_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut curves = runs.iter().map(|r| load_run(r)).collect::<Result<Vec<_>>>()?;
    dedupe_labels(&mut curves);

    let csv_path = out.join("stability_report.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record(["run", "label", "epoch", "ir", "avg_delta"])?;
    for c in &curves {
        for r in &c.rows {
            w.write_record([
                c.dir.display().to_string(),
                c.label.clone(),
                r.epoch.to_string(),
                format!("{:.6}", r.ir),
                format!("{:.6}", r.avg_delta),
            ])?;
        }
    }
    w.flush()?;

    let text = register_font();
    if !text {
        log::warn!("no usable font found (set CROWDPOINT_FONT); plot has no labels");
    }
    let png = out.join("ir_curves.png");
    plot(&curves, &png, text)?;
    println!("wrote {} and {}", csv_path.display(), png.display());
    Ok(())
}
