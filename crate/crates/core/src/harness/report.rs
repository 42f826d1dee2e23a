//! Report files.
//!
//! * `runs.csv`: one record per run (status, failure stage and class, hashes,
//!   seeds, metrics, timing).
//! * `sweep.csv`: one record per axis value (`axis,value,runs,failed,mean,std,
//!   mean_train`), present for sweeps.
//! * `report.json`: the whole report, including per-run confusion matrices
//!   and held-out regularization scores.
//! * `confusion-<run>.csv`: the `K x K` test confusion matrix of each
//!   classification run (rows: true class, columns: predicted class).

use std::path::{Path, PathBuf};

use super::run::{RunReport, RunStatus};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Delimited tables.
    Csv,
    /// Structured JSON.
    Json,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_u(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const RUN_COLUMNS: [&str; 27] = [
    "name",
    "axis",
    "axis_value",
    "repeat",
    "status",
    "failed_stage",
    "failure_class",
    "message",
    "config_hash",
    "feature_hash",
    "split_seed",
    "embedding_seed",
    "operator_seed",
    "noise_seed",
    "n_train",
    "n_test",
    "m_channels",
    "lambda",
    "i_sat",
    "train_accuracy",
    "train_rmsd",
    "train_nrmsd",
    "test_accuracy",
    "test_rmsd",
    "test_nrmsd",
    "features_s",
    "total_s",
];

fn write_runs_csv(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(RUN_COLUMNS).map_err(csv_error(path))?;
    for r in &report.runs {
        let (status, stage, class, message) = match &r.status {
            RunStatus::Ok => ("ok", String::new(), String::new(), String::new()),
            RunStatus::Failed { stage, class, message } => {
                let class = serde_json::to_value(class).expect("class serializes");
                (
                    "failed",
                    stage.clone(),
                    class.as_str().unwrap_or_default().to_string(),
                    message.clone(),
                )
            }
        };
        let train = r.train.as_ref();
        let test = r.test.as_ref();
        let record = [
            r.name.clone(),
            r.axis.clone().unwrap_or_default(),
            opt(r.axis_value),
            r.repeat.to_string(),
            status.to_string(),
            stage,
            class,
            message,
            r.config_hash.clone(),
            r.feature_hash.clone(),
            r.seeds.split.to_string(),
            opt_u(r.seeds.embedding),
            opt_u(r.seeds.operator),
            opt_u(r.seeds.noise),
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.m_channels.to_string(),
            opt(r.lambda),
            opt(r.i_sat),
            opt(train.and_then(|m| m.accuracy)),
            opt(train.map(|m| m.rmsd)),
            opt(train.and_then(|m| m.nrmsd)),
            opt(test.and_then(|m| m.accuracy)),
            opt(test.map(|m| m.rmsd)),
            opt(test.and_then(|m| m.nrmsd)),
            r.timing.features_s.to_string(),
            r.timing.total_s.to_string(),
        ];
        w.write_record(&record).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

fn write_sweep_csv(report: &RunReport, path: &Path) -> Result<bool, HarnessError> {
    let Some(sweep) = &report.sweep else {
        return Ok(false);
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(["axis", "value", "runs", "failed", "mean", "std", "mean_train"])
        .map_err(csv_error(path))?;
    let axis = serde_json::to_value(sweep.axis).expect("axis serializes");
    let axis = axis.as_str().unwrap_or_default();
    for row in &sweep.rows {
        w.write_record([
            axis.to_string(),
            row.axis_value.to_string(),
            row.runs.to_string(),
            row.failed.to_string(),
            opt(row.mean_error),
            opt(row.std_error),
            opt(row.mean_train_error),
        ])
        .map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))?;
    Ok(true)
}

fn write_confusion_csv(confusion: &[Vec<u64>], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    let k = confusion.len();
    let mut header = vec!["true\\predicted".to_string()];
    header.extend((0..k).map(|c| c.to_string()));
    w.write_record(&header).map_err(csv_error(path))?;
    for (i, row) in confusion.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

/// Write `report` into `dir` in the requested formats; returns the files
/// written.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Csv) {
        let runs = dir.join("runs.csv");
        write_runs_csv(report, &runs)?;
        written.push(runs);
        let sweep = dir.join("sweep.csv");
        if write_sweep_csv(report, &sweep)? {
            written.push(sweep);
        }
        for (i, r) in report.runs.iter().enumerate() {
            if let Some(conf) = r.test.as_ref().and_then(|m| m.confusion.as_ref()) {
                let path = dir.join(format!("confusion-{i}.csv"));
                write_confusion_csv(conf, &path)?;
                written.push(path);
            }
        }
    }
    if formats.contains(&ReportFormat::Json) {
        let path = dir.join("report.json");
        let json = serde_json::to_vec_pretty(report).expect("report serializes");
        std::fs::write(&path, json).map_err(io_error(&path))?;
        written.push(path);
    }
    Ok(written)
}
