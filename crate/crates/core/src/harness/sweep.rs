//! One-axis hyperparameter sweeps with repeats.
//!
//! Repeat `r` shifts the embedding, operator and noise seeds by `r`; the data
//! split never changes within a sweep. Sweeps over the readout
//! regularization reuse one feature matrix per repeat.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::Saturation;
use crate::encoder::EmbeddingKind;
use crate::parallel::{map_ordered, Execution};
use crate::readout::train_ridge;
use crate::readout::TargetMatrix;

use super::config::{ExperimentConfig, LambdaSpec};
use super::run::{compute_features, load_data, run_loaded, score_into, LoadedData, RunRecord, RunReport, Timing};
use super::{AtStage, HarnessError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Maximum amplitude of a noise embedding.
    NoiseAmplitude,
    /// Block side of a noise embedding.
    CorrelationLength,
    /// Carrier frequency count of a Fourier embedding.
    NFrequencies,
    /// Number of readout channels.
    MChannels,
    /// Fixed saturation intensity.
    ISat,
    /// Readout regularization.
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NoiseAmplitude => "noise-amplitude",
            SweepAxis::CorrelationLength => "correlation-length",
            SweepAxis::NFrequencies => "n-frequencies",
            SweepAxis::MChannels => "m-channels",
            SweepAxis::ISat => "i-sat",
            SweepAxis::Lambda => "lambda",
        }
    }

    /// Set this axis of `cfg` to `value`.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<(), HarnessError> {
        let count = |v: f64| -> Result<usize, HarnessError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HarnessError::Config(format!(
                    "{} needs positive integers, got {v}",
                    self.name()
                )))
            }
        };
        let wrong_kind =
            || HarnessError::Config(format!("{} sweep does not fit the configured embedding", self.name()));
        match self {
            SweepAxis::NoiseAmplitude => match &mut cfg.embedding {
                EmbeddingKind::Noise { amplitude, .. } => *amplitude = value,
                _ => return Err(wrong_kind()),
            },
            SweepAxis::CorrelationLength => match &mut cfg.embedding {
                EmbeddingKind::Noise { correlation_length, .. } => *correlation_length = count(value)?,
                _ => return Err(wrong_kind()),
            },
            SweepAxis::NFrequencies => match &mut cfg.embedding {
                EmbeddingKind::Fourier {
                    frequencies, phases, ..
                } => {
                    if phases.is_some() {
                        return Err(HarnessError::Config(
                            "n-frequencies sweep needs seeded carrier phases".into(),
                        ));
                    }
                    *frequencies = count(value)?;
                }
                _ => return Err(wrong_kind()),
            },
            SweepAxis::MChannels => cfg.detector.channels.m_channels = count(value)?,
            SweepAxis::ISat => cfg.detector.saturation = Saturation::Fixed(value),
            SweepAxis::Lambda => cfg.readout.lambda = LambdaSpec::Fixed(value),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisUnit {
    #[default]
    One,
    /// Values are multiples of pi.
    Pi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub unit: AxisUnit,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Run cells concurrently (each cell holds its own feature matrices).
    #[serde(default)]
    pub parallel_runs: bool,
}

fn one() -> usize {
    1
}

impl SweepSettings {
    /// Axis values in the units the pipeline uses.
    pub fn scaled_values(&self) -> Vec<f64> {
        let k = match self.unit {
            AxisUnit::One => 1.0,
            AxisUnit::Pi => PI,
        };
        self.values.iter().map(|v| v * k).collect()
    }
}

/// A `[sweep]` table plus the base experiment in the same file.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub sweep: SweepSettings,
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn new(sweep: SweepSettings, base: ExperimentConfig) -> Result<SweepSpec, HarnessError> {
        let spec = SweepSpec { sweep, base };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<SweepSpec, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let sweep = table
            .remove("sweep")
            .ok_or_else(|| HarnessError::Config("missing [sweep] table".into()))?;
        let sweep: SweepSettings = sweep
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("sweep: {e}")))?;
        let base: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        base.validate()?;
        SweepSpec::new(sweep, base)
    }

    pub fn from_file(path: &Path) -> Result<SweepSpec, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::from_toml_str(&text)?;
        spec.base.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.sweep.values.is_empty() {
            return Err(HarnessError::Config("sweep has no values".into()));
        }
        if self.sweep.repeats == 0 {
            return Err(HarnessError::Config("sweep needs at least one repeat".into()));
        }
        let mut probe = self.base.clone();
        for v in self.sweep.scaled_values() {
            self.sweep.axis.apply(&mut probe, v)?;
        }
        Ok(())
    }

    /// Configuration of one cell.
    pub fn cell(&self, value: f64, repeat: usize) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = self.base.with_seed_offset(repeat as u64);
        self.sweep.axis.apply(&mut cfg, value)?;
        Ok(cfg)
    }
}

/// Aggregate of all repeats at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub runs: usize,
    pub failed: usize,
    /// Mean and sample standard deviation of the run error (test error rate,
    /// or NRMSD for regression) over successful repeats.
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
    pub mean_train_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

pub(crate) fn summarize(axis: SweepAxis, values: &[f64], runs: &[RunRecord]) -> SweepSummary {
    let rows = values
        .iter()
        .map(|&v| {
            let cell: Vec<&RunRecord> = runs.iter().filter(|r| r.axis_value == Some(v)).collect();
            let errors: Vec<f64> = cell.iter().filter(|r| r.is_ok()).filter_map(|r| r.error()).collect();
            let train: Vec<f64> = cell
                .iter()
                .filter(|r| r.is_ok())
                .filter_map(|r| r.train.as_ref().and_then(|m| m.error_rate().or(m.nrmsd)))
                .collect();
            let (mean_error, std_error) = mean_std(&errors);
            SweepRow {
                axis_value: v,
                runs: cell.len(),
                failed: cell.iter().filter(|r| !r.is_ok()).count(),
                mean_error,
                std_error,
                mean_train_error: mean_std(&train).0,
            }
        })
        .collect();
    SweepSummary { axis, rows }
}

fn tag(mut r: RunRecord, axis: SweepAxis, value: f64, repeat: usize) -> RunRecord {
    r.axis = Some(axis.name().to_string());
    r.axis_value = Some(value);
    r.repeat = repeat;
    r
}

/// Run every cell of `spec` on already loaded data.
pub fn run_sweep_on(spec: &SweepSpec, data: &LoadedData) -> RunReport {
    let values = spec.sweep.scaled_values();
    let axis = spec.sweep.axis;
    let runs = if axis == SweepAxis::Lambda {
        lambda_sweep(spec, &values, data)
    } else {
        let cells: Vec<(usize, f64, usize)> = values
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| (0..spec.sweep.repeats).map(move |r| (i, v, r)))
            .collect();
        let exec = if spec.sweep.parallel_runs {
            Execution::Parallel
        } else {
            Execution::Sequential
        };
        map_ordered(exec, &cells, |&(i, v, r)| {
            log::info!("{} = {v} (repeat {r})", axis.name());
            match spec.cell(v, r) {
                Ok(cfg) => tag(run_loaded(&cfg, data).0, axis, values[i], r),
                Err(e) => {
                    let cfg = spec.base.with_seed_offset(r as u64);
                    tag(RunRecord::pending(&cfg, data).fail(&e), axis, v, r)
                }
            }
        })
    };
    RunReport {
        name: spec.base.name.clone(),
        sweep: Some(summarize(axis, &values, &runs)),
        runs,
    }
}

/// Features depend only on the repeat; fit every regularization value on
/// them. Records come back value-major like other sweeps.
fn lambda_sweep(spec: &SweepSpec, values: &[f64], data: &LoadedData) -> Vec<RunRecord> {
    let axis = SweepAxis::Lambda;
    let mut by_repeat: Vec<Vec<RunRecord>> = Vec::new();
    for r in 0..spec.sweep.repeats {
        let base = spec.base.with_seed_offset(r as u64);
        let features = compute_features(&base, data, base.execution);
        let mut row = Vec::new();
        for &v in values {
            let mut cfg = base.clone();
            let record = match axis.apply(&mut cfg, v) {
                Err(e) => RunRecord::pending(&cfg, data).fail(&e),
                Ok(()) => {
                    let mut record = RunRecord::pending(&cfg, data);
                    match &features {
                        Err(e) => record.fail(e),
                        Ok(f) => {
                            let start = std::time::Instant::now();
                            let fitted = TargetMatrix::encode(&data.train.targets, data.train.task)
                                .and_then(|t| {
                                    train_ridge(f.train.values.view(), &t, v, &cfg.config_hash(), cfg.execution)
                                })
                                .at(Stage::Readout)
                                .and_then(|model| score_into(&mut record, &model, f, data));
                            record.timing = Timing {
                                features_s: f.seconds,
                                readout_s: start.elapsed().as_secs_f64(),
                                total_s: f.seconds + start.elapsed().as_secs_f64(),
                            };
                            match fitted {
                                Ok(()) => record,
                                Err(e) => record.fail(&e),
                            }
                        }
                    }
                }
            };
            row.push(tag(record, axis, v, r));
        }
        by_repeat.push(row);
    }
    (0..values.len())
        .flat_map(|i| by_repeat.iter().map(move |row| row[i].clone()))
        .collect()
}

/// Load the data once and run every cell of `spec`.
pub fn run_sweep(spec: &SweepSpec) -> Result<RunReport, HarnessError> {
    spec.validate()?;
    let data = load_data(&spec.base)?;
    Ok(run_sweep_on(spec, &data))
}
