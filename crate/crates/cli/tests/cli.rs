use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "scene.image_size=32",
    "scene.n_max=6",
    "model.encoder_channels=[3, 4, 5]",
    "model.ifi_hidden=6",
    "model.ifi_out=4",
    "model.head_hidden=[8]",
    "train.crop=32",
    "train.batch_size=2",
    "train.epochs=2",
    "data.train_scenes=4",
    "data.probe_scenes=2",
    "data.test_scenes=2",
];

fn crowdpoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdpoint"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn tiny_args<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--out", out];
    for s in TINY {
        v.extend(["--set", s]);
    }
    v.extend(extra);
    v
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_data_writes_images_and_one_annotation_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let out = out.to_str().unwrap();
    let o = crowdpoint(&["gen-data", "--out", out, "--count", "10", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("d/images")).unwrap().count(), 10);
    let ann = read(&dir.path().join("d/annotations.txt"));

    // Same seed again, with overwrite: identical files.
    let o = crowdpoint(&["gen-data", "--out", out, "--count", "10", "--seed", "3", "--overwrite"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&dir.path().join("d/annotations.txt")), ann);
    let first = std::fs::read_dir(dir.path().join("d/images")).unwrap().next().unwrap().unwrap();
    let bytes = read(&first.path());
    let o = crowdpoint(&["gen-data", "--out", out, "--count", "10", "--seed", "3", "--overwrite"]);
    assert!(o.status.success());
    assert_eq!(read(&first.path()), bytes);
}

#[test]
fn refuses_to_clobber_without_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let o = crowdpoint(&["gen-data", "--out", dir.path().to_str().unwrap(), "--count", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--overwrite"));
    assert!(dir.path().join("keep.txt").exists());
}

#[test]
fn invalid_key_lists_valid_keys_on_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = crowdpoint(&["gen-data", "--out", out.to_str().unwrap(), "--set", "scene.imagesize=3"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("imagesize") && err.contains("image_size") && err.contains("n_max"), "{err}");
}

#[test]
fn unknown_flags_and_axes_are_errors() {
    let o = crowdpoint(&["train", "--out", "x", "--epochs", "3"]);
    assert!(!o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = crowdpoint(&["ablate", "--out", out.to_str().unwrap(), "--axis", "colour"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown ablation axis"));
}

#[test]
fn help_lists_every_flag() {
    for cmd in ["gen-data", "train", "eval", "ablate"] {
        let o = crowdpoint(&[cmd, "--help"]);
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--set", "--out", "--seed", "--overwrite"] {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn train_is_deterministic_and_eval_reads_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = crowdpoint(&tiny_args("train", out.to_str().unwrap(), &["--seed", "5"]));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["losses.csv", "stability.csv", "config.toml", "eval.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
    assert!(a.join("checkpoints/epoch_0.json").exists());
    assert!(a.join("checkpoints/epoch_2.json").exists());

    let e = dir.path().join("e");
    let ckpt = a.join("checkpoints/epoch_2.json");
    let o = crowdpoint(&["eval", "--out", e.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Same model and test set as the end of training.
    assert_eq!(read(&e.join("eval.csv")), read(&a.join("eval.csv")));
}

#[test]
fn stability_report_overlays_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<String> = ["matcher", "matcher_apg"]
        .iter()
        .map(|s| {
            let out = dir.path().join(s);
            let set = format!("train.strategy={s}");
            let o = crowdpoint(&tiny_args("train", out.to_str().unwrap(), &["--set", &set]));
            assert!(o.status.success(), "{}", stderr(&o));
            out.to_str().unwrap().to_string()
        })
        .collect();

    let rep = dir.path().join("report");
    let o = crowdpoint(&["stability-report", &runs[0], &runs[1], "--out", rep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(rep.join("stability_report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "run,label,epoch,ir,avg_delta");
    // Two epochs per run: IR exists only for epoch 2.
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",matcher,2,"));
    assert!(lines[2].contains(",matcher_apg,2,"));
    let png = image::open(rep.join("ir_curves.png")).unwrap();
    assert!(png.width() > 100 && png.height() > 100);

    // One run, one curve.
    let one = dir.path().join("one");
    let o = crowdpoint(&["stability-report", &runs[0], "--out", one.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(one.join("stability_report.csv")).unwrap().lines().count(), 2);

    // A run with one epoch has no IR point.
    let short = dir.path().join("short");
    let o = crowdpoint(&tiny_args("train", short.to_str().unwrap(), &["--set", "train.epochs=1"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let rep1 = dir.path().join("rep1");
    let o = crowdpoint(&["stability-report", short.to_str().unwrap(), "--out", rep1.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(rep1.join("stability_report.csv")).unwrap().lines().count(), 1);
}

#[test]
fn stability_report_names_the_run_without_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty_run");
    std::fs::create_dir_all(&empty).unwrap();
    let out = dir.path().join("r");
    let o = crowdpoint(&["stability-report", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("empty_run") && err.contains("stability.csv"), "{err}");
}

#[test]
fn ablate_writes_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let o = crowdpoint(&tiny_args(
        "ablate",
        out.to_str().unwrap(),
        &["--axis", "strategy", "--set", "train.epochs=1"],
    ));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ablation_strategy.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "setting,seed,mae,mse,mean_signed_error,f1_s4,f1_s8,avg_ir,avg_delta,final_ir"
    );
    assert_eq!(lines.len(), 5);
    for (line, s) in lines[1..].iter().zip(["matcher", "nearest_point", "apg_only", "matcher_apg"]) {
        assert!(line.starts_with(&format!("{s},0,")), "{line}");
    }
}
