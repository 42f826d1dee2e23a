//! Experiment orchestration: configuration, runs, sweeps and reports.

mod config;
mod report;
mod run;
mod sweep;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{DataError, OpticsError, ReadoutError};
use crate::features::FeatureFileError;

pub use config::{
    DatasetSpec, EncoderSpec, ExperimentConfig, LambdaSpec, LayoutSpec, OutputSpec, Profile, ReadoutSpec, SchemaSpec,
    SeedSet, HARDWARE_PHASE_LEVELS, HARDWARE_READOUT_LEVELS,
};
pub use report::{emit_report, ReportFormat};
pub use run::{
    build_pipeline, compute_features, evaluate_saved, fit_readout, load_data, run_experiment, run_loaded, FeatureSet,
    LoadedData, RunRecord, RunReport, RunStatus, SavedModel, Timing, MODEL_FORMAT_VERSION, TEST_STREAM_BASE,
};
pub use sweep::{run_sweep, run_sweep_on, AxisUnit, SweepAxis, SweepRow, SweepSettings, SweepSpec, SweepSummary};

/// Pipeline stage at which a run failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Split,
    Layout,
    Embedding,
    Operator,
    Calibration,
    Detector,
    Features,
    Readout,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Layout => "layout",
            Stage::Embedding => "embedding",
            Stage::Operator => "operator",
            Stage::Calibration => "calibration",
            Stage::Detector => "detector",
            Stage::Features => "features",
            Stage::Readout => "readout",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Data { stage: Stage, source: DataError },
    #[error("{stage}: {source}")]
    Optics { stage: Stage, source: OpticsError },
    #[error("{stage}: {source}")]
    Readout { stage: Stage, source: ReadoutError },
    #[error("feature cache: {0}")]
    FeatureFile(#[from] FeatureFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl HarnessError {
    pub fn class(&self) -> FailureClass {
        match self {
            HarnessError::Config(_) => FailureClass::Config,
            HarnessError::Data { .. } | HarnessError::FeatureFile(_) | HarnessError::Format(_) => FailureClass::Data,
            HarnessError::Optics { source, .. } => match source {
                OpticsError::ChannelsOutOfBounds { .. }
                | OpticsError::GridMismatch { .. }
                | OpticsError::LengthMismatch { .. }
                | OpticsError::Layout(_)
                | OpticsError::CorrelationLength { .. }
                | OpticsError::Amplitude(_)
                | OpticsError::NoFrequencies
                | OpticsError::PhaseCount { .. }
                | OpticsError::Encoder(_)
                | OpticsError::Detector(_) => FailureClass::Config,
                OpticsError::EmbeddingRange(_) | OpticsError::CustomGrid(_) => FailureClass::Data,
            },
            HarnessError::Readout { .. } => FailureClass::Numeric,
            HarnessError::Io { .. } => FailureClass::Io,
        }
    }

    /// Stage the error was raised in, when known.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Data { stage, .. }
            | HarnessError::Optics { stage, .. }
            | HarnessError::Readout { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, HarnessError>;
}

impl<T> AtStage<T> for Result<T, DataError> {
    fn at(self, stage: Stage) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Data { stage, source })
    }
}

impl<T> AtStage<T> for Result<T, OpticsError> {
    fn at(self, stage: Stage) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Optics { stage, source })
    }
}

impl<T> AtStage<T> for Result<T, ReadoutError> {
    fn at(self, stage: Stage) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Readout { stage, source })
    }
}
