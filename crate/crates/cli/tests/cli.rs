use std::path::Path;
use std::process::{Command, Output};

use pelm::features::read_features_binary;

const EXPERIMENT: &str = r#"
name = "toy"

[dataset]
kind = "uci"
path = "toy.csv"
schema = { columns = ["categorical", "numeric", "numeric", "target-class"] }

[split]
n_train = 120
n_test = 40
shuffle_seed = 5

[encoder]
layout = { kind = "tiled", side = 16 }

[embedding]
kind = "noise"
amplitude = 3.0
correlation_length = 1
seed = 9

[detector]
saturation = "auto"
channels = { m_channels = 64 }
"#;

/// Deterministic toy rows: the label depends on all three attributes.
fn write_toy_csv(path: &Path, rows: usize) {
    let mut text = String::new();
    for i in 0..rows {
        let color = ["red", "green", "blue"][i % 3];
        let x = ((i * 37) % 101) as f64 / 100.0;
        let y = ((i * 61) % 97) as f64 / 96.0;
        let shift = if color == "red" { 0.4 } else { 0.0 };
        let label = if x + 0.7 * y + shift > 0.9 { "yes" } else { "no" };
        text += &format!("{color},{x:.4},{y:.4},{label}\n");
    }
    std::fs::write(path, text).unwrap();
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_toy_csv(&dir.path().join("toy.csv"), 160);
    std::fs::write(dir.path().join("toy.toml"), config).unwrap();
    dir
}

fn pelm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pelm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn load_check_summarizes_the_data() {
    let dir = workspace(EXPERIMENT);
    let out = pelm(dir.path(), &["load-check", "toy.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("train 120 rows, test 40 rows"), "{text}");
    assert!(text.contains("config "), "{text}");
}

#[test]
fn run_writes_reports_and_a_replayable_model() {
    let dir = workspace(EXPERIMENT);
    let out = pelm(dir.path(), &["run", "toy.toml", "--out", "report", "--save-model"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report/report.json")).unwrap()).unwrap();
    let run = &report["runs"][0];
    assert_eq!(run["status"]["state"], "ok");
    assert_eq!(run["n_train"], 120);
    let csv = std::fs::read_to_string(dir.path().join("report/runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let eval = pelm(dir.path(), &["eval", "report/model.json"]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let metrics: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(metrics, run["test"]);
}

#[test]
fn overrides_change_the_run() {
    let dir = workspace(EXPERIMENT);
    let out = pelm(
        dir.path(),
        &[
            "run",
            "toy.toml",
            "--out",
            "r",
            "--m-channels",
            "16",
            "--lambda",
            "0.5",
            "--set",
            "split.n_test=20",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/report.json")).unwrap()).unwrap();
    let run = &report["runs"][0];
    assert_eq!(run["m_channels"], 16);
    assert_eq!(run["n_test"], 20);
    assert_eq!(run["lambda"], 0.5);
}

#[test]
fn sweep_reports_every_cell() {
    let config = format!("{EXPERIMENT}\n[sweep]\naxis = \"m-channels\"\nvalues = [16, 36]\nrepeats = 2\n");
    let dir = workspace(&config);
    let out = pelm(dir.path(), &["sweep", "toy.toml", "--out", "sweep", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("sweep/report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    assert_eq!(report["sweep"]["rows"].as_array().unwrap().len(), 2);
    assert!(!dir.path().join("sweep/runs.csv").exists());
}

#[test]
fn export_features_round_trips() {
    let dir = workspace(EXPERIMENT);
    let out = pelm(dir.path(), &["export-features", "toy.toml", "--out", "feat"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let train = read_features_binary(&dir.path().join("feat/train.bin")).unwrap();
    let test = read_features_binary(&dir.path().join("feat/test.bin")).unwrap();
    assert_eq!((train.rows(), train.channels()), (120, 64));
    assert_eq!((test.rows(), test.channels()), (40, 64));
    assert!(train.values.iter().all(|v| (0.0..=1.0).contains(v)));

    let out = pelm(
        dir.path(),
        &["export-features", "toy.toml", "--out", "feat", "--format", "csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("feat/train.csv")).unwrap();
    let first: Vec<f64> = csv
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first.len(), 64);
    for (a, b) in first.iter().zip(train.values.row(0)) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn invalid_configuration_exits_with_code_2() {
    let dir = workspace(&EXPERIMENT.replace("m_channels = 64", "m_channels = 0"));
    let out = pelm(dir.path(), &["run", "toy.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let dir = workspace("this is not toml");
    assert_eq!(pelm(dir.path(), &["load-check", "toy.toml"]).status.code(), Some(2));
}

#[test]
fn missing_data_exits_with_code_3() {
    let dir = workspace(&EXPERIMENT.replace("toy.csv", "absent.csv"));
    let out = pelm(dir.path(), &["run", "toy.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("absent.csv"));
}

#[test]
fn singular_readout_exits_with_code_4() {
    // 64 channels, 20 training rows and no regularization.
    let dir = workspace(EXPERIMENT);
    let out = pelm(
        dir.path(),
        &["run", "toy.toml", "--out", "r", "--n-train", "20", "--lambda", "0"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/report.json")).unwrap()).unwrap();
    let status = &report["runs"][0]["status"];
    assert_eq!(status["state"], "failed");
    assert_eq!(status["class"], "numeric");
}
