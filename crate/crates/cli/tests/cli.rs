use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gappy_core::evaluation::metrics::{write_metrics_csv, write_scatter_csv};
use gappy_core::evaluation::{IsometrySummary, MetricRow};
use gappy_fuse::pipeline::{scatter_file, ARTIFACTS, METRICS, SCATTER_SVG};
use gappy_fuse::{emit_report, parse_config, CliError};

const SMALL: &str = r#"
seed = 3

[scenario]
kind = "same_domain"
points = 20
burst_size = 8

[training]
epochs = 5
hidden = [8]
batch_bursts = 8

[evaluation]
pair_samples = 2000
baseline = true

[evaluation.thresholds]
max_relative_rmse = 100.0
require_rigid = false
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gappy-fuse"));
    c.env_remove("GAPPY_FUSE_THREADS").env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn single_subdir(parent: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(parent)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn negative_sigma_is_rejected_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("burst_size = 8", "burst_size = 8\nsigma = -0.1"));
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("scenario.sigma"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let err = parse_config(&SMALL.replace("epochs = 5", "epochs = 5\nepochz = 3"), "test").unwrap_err();
    assert!(err.to_string().contains("training"), "{err}");
    let err = parse_config(&SMALL.replace("epochs = 5", "epochs = -5"), "test").unwrap_err();
    assert!(err.to_string().contains("training.epochs"), "{err}");
}

#[test]
fn dry_run_stops_after_rigidity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let parent = tmp.path().join("runs");
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", parent.to_str().unwrap(), "--dry-run"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dir = single_subdir(&parent);
    for f in ["dataset.json", "ground_truth.json", "rigidity.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    for f in ["checkpoint.json", "history.csv", "metrics.csv", "embedding.csv", "isometry.svg"] {
        assert!(!dir.join(f).exists(), "{f} written by a dry run");
    }
}

#[test]
fn full_run_writes_every_artifact_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let parent = tmp.path().join(name);
        let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", parent.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let dir = single_subdir(&parent);
        for f in ARTIFACTS {
            assert!(dir.join(f).exists(), "{f} missing");
        }
        assert!(dir.join(scatter_file("baseline")).exists());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("gappy_loca") && stdout.contains("baseline"), "{stdout}");
        metrics.push(fs::read(dir.join(METRICS)).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn stages_share_one_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("baseline = true", "baseline = false"));
    let dir = tmp.path().join("staged");
    let c = cfg.to_str().unwrap();
    let d = dir.to_str().unwrap();
    for stage in ["generate", "rigidity", "train"] {
        let out = run(&[stage, "--config", c, "--out", d]);
        assert!(matches!(out.status.code(), Some(0) | Some(2)), "{stage}: {}", stderr(&out));
    }
    assert!(dir.join("checkpoint.json").exists());
    let checkpoint = fs::read(dir.join("checkpoint.json")).unwrap();
    let out = run(&["evaluate", "--config", c, "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // evaluation reuses the trained model
    assert_eq!(fs::read(dir.join("checkpoint.json")).unwrap(), checkpoint);
    for f in ARTIFACTS {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    fs::remove_file(dir.join(SCATTER_SVG)).unwrap();
    let out = run(&["report", "--out", d]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.join(SCATTER_SVG).exists());
}

#[test]
fn failed_threshold_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("max_relative_rmse = 100.0", "max_relative_rmse = 1e-9"));
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL gappy_loca_relative_rmse"));
}

#[test]
fn report_on_an_empty_directory_names_the_metrics_file() {
    let tmp = tempfile::tempdir().unwrap();
    match emit_report(tmp.path()) {
        Err(CliError::MissingArtifacts(files)) => assert_eq!(files, vec![METRICS.to_string()]),
        other => panic!("unexpected {other:?}"),
    }
    let out = run(&["report", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("metrics.csv"));
}

#[test]
fn bad_thread_variable_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for value in ["zero", "0"] {
        let out = bin()
            .env("GAPPY_FUSE_THREADS", value)
            .args(["generate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(1));
        assert!(stderr(&out).contains("GAPPY_FUSE_THREADS"), "{}", stderr(&out));
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let out = run(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/config.toml"));
}

/// `(cx, cy)` of every scatter circle in the series group.
fn circles(svg: &str) -> Vec<(f64, f64)> {
    let attr = |line: &str, name: &str| -> f64 {
        let start = line.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
        let end = start + line[start..].find('"').unwrap();
        line[start..end].parse().unwrap()
    };
    let mut inside = false;
    let mut out = Vec::new();
    for line in svg.lines() {
        if line.contains("class=\"series\"") {
            inside = true;
        } else if line.starts_with("</g>") {
            inside = false;
        } else if inside && line.starts_with("<circle") {
            out.push((attr(line, "cx"), attr(line, "cy")));
        }
    }
    out
}

#[test]
fn perfect_embedding_lies_on_the_identity_line() {
    let tmp = tempfile::tempdir().unwrap();
    let pairs: Vec<(f64, f64)> = (1..=200).map(|i| (i as f64 * 0.05, i as f64 * 0.05)).collect();
    let summary = IsometrySummary::from_pairs(pairs.clone());
    assert_eq!(summary.rmse, 0.0);
    let rows = vec![MetricRow::new("same_domain", "gappy_loca", &summary, 0)];
    write_metrics_csv(fs::File::create(tmp.path().join(METRICS)).unwrap(), &rows).unwrap();
    write_scatter_csv(fs::File::create(tmp.path().join(scatter_file("gappy_loca"))).unwrap(), &pairs).unwrap();
    let text = emit_report(tmp.path()).unwrap();
    assert!(text.contains("gappy_loca"));
    let svg = fs::read_to_string(tmp.path().join(SCATTER_SVG)).unwrap();
    let pts = circles(&svg);
    assert_eq!(pts.len(), pairs.len());
    // x grows to the right and y upward from the same origin, so the
    // identity line satisfies cx + cy = const
    let sum = pts[0].0 + pts[0].1;
    assert!(pts.iter().all(|(x, y)| (x + y - sum).abs() < 0.02));
    assert!(pts.windows(2).all(|w| w[1].0 > w[0].0));
}

#[test]
fn missing_scatter_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = IsometrySummary::from_pairs(vec![(1.0, 1.0)]);
    let rows = vec![
        MetricRow::new("patchy", "gappy_loca", &summary, 0),
        MetricRow::new("patchy", "baseline", &summary, 0),
    ];
    write_metrics_csv(fs::File::create(tmp.path().join(METRICS)).unwrap(), &rows).unwrap();
    write_scatter_csv(fs::File::create(tmp.path().join(scatter_file("gappy_loca"))).unwrap(), &[(1.0, 1.0)]).unwrap();
    match emit_report(tmp.path()) {
        Err(CliError::MissingArtifacts(files)) => assert_eq!(files, vec![scatter_file("baseline")]),
        other => panic!("unexpected {other:?}"),
    }
}
