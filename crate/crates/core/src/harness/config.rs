//! Declarative experiment configuration (TOML).
//!
//! Every random quantity is driven by an explicit seed in the file; a missing
//! seed is a parse error rather than a silent default.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Schema, SplitSpec};
use crate::detection::{DetectorConfig, ReadoutLevels};
use crate::encoder::{EmbeddingKind, PhaseLevels};
use crate::parallel::Execution;
use crate::propagation::OperatorSpec;
use crate::readout::DEFAULT_LAMBDA_GRID;

use super::HarnessError;

/// Phase levels of the modulator in the hardware-faithful profile.
pub const HARDWARE_PHASE_LEVELS: u32 = 210;
/// Gray levels of the camera in the hardware-faithful profile.
pub const HARDWARE_READOUT_LEVELS: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Continuous phases and gray levels unless configured otherwise.
    #[default]
    Numerical,
    /// Continuous phase and gray-level settings are replaced by the device
    /// values (210 phase levels, 8-bit camera).
    HardwareFaithful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DatasetSpec {
    /// The four standard IDX files in `dir`. Training rows are drawn from the
    /// training files and test rows from the test files.
    Mnist { dir: PathBuf },
    /// A delimited file split into train and test rows.
    Uci { path: PathBuf, schema: SchemaSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSpec {
    /// `"mushroom"` or `"abalone"`.
    Preset(String),
    Custom(Schema),
}

impl SchemaSpec {
    pub fn resolve(&self) -> Result<Schema, HarnessError> {
        match self {
            SchemaSpec::Preset(name) => match name.as_str() {
                "mushroom" => Ok(Schema::mushroom()),
                "abalone" => Ok(Schema::abalone()),
                other => Err(HarnessError::Config(format!("unknown schema preset '{other}'"))),
            },
            SchemaSpec::Custom(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LayoutSpec {
    /// Each pixel of a `rows x cols` image becomes a `cell x cell` block.
    /// Image dimensions default to a square image of all attributes.
    Replicated {
        cell: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cols: Option<usize>,
    },
    /// Equal-area blocks on a `side x side` grid.
    Tiled { side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub layout: LayoutSpec,
    #[serde(default = "default_phase_scale")]
    pub phase_scale: f64,
    #[serde(default)]
    pub phase_levels: PhaseLevels,
}

fn default_phase_scale() -> f64 {
    PI
}

/// One regularization value, or a grid searched on held-out training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Fixed(f64),
    Grid(Vec<f64>),
}

impl LambdaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaSpec::Fixed(l) => vec![*l],
            LambdaSpec::Grid(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSpec {
    #[serde(default = "default_lambda")]
    pub lambda: LambdaSpec,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_lambda() -> LambdaSpec {
    LambdaSpec::Grid(DEFAULT_LAMBDA_GRID.to_vec())
}

fn default_holdout() -> f64 {
    0.1
}

impl Default for ReadoutSpec {
    fn default() -> Self {
        ReadoutSpec {
            lambda: default_lambda(),
            holdout_fraction: default_holdout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Directory for reports, models and confusion tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Directory of cached feature matrices keyed by feature hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_cache: Option<PathBuf>,
    #[serde(default)]
    pub save_model: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub profile: Profile,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub encoder: EncoderSpec,
    pub embedding: EmbeddingKind,
    #[serde(default)]
    pub operator: OperatorSpec,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub readout: ReadoutSpec,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Everything upstream of the readout, with the profile applied. Two
/// configurations with equal `FeatureKey`s produce identical features.
#[derive(Serialize)]
struct FeatureKey<'a> {
    dataset: &'a DatasetSpec,
    split: &'a SplitSpec,
    encoder: &'a EncoderSpec,
    embedding: &'a EmbeddingKind,
    operator: &'a OperatorSpec,
    detector: &'a DetectorConfig,
    /// Digest of a custom embedding file, so edits to it change the hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    custom_grid: Option<String>,
}

#[derive(Serialize)]
struct ConfigKey<'a> {
    features: String,
    readout: &'a ReadoutSpec,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Make relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Mnist { dir } => fix(dir),
            DatasetSpec::Uci { path, .. } => fix(path),
        }
        if let EmbeddingKind::Custom { path } = &mut self.embedding {
            fix(path);
        }
        if let Some(d) = &mut self.output.dir {
            fix(d);
        }
        if let Some(d) = &mut self.output.feature_cache {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.split.n_train == 0 {
            return bad("split.n_train must be positive".into());
        }
        if !(self.encoder.phase_scale > 0.0 && self.encoder.phase_scale <= 2.0 * PI) {
            return bad(format!(
                "encoder.phase_scale {} outside (0, 2 pi]",
                self.encoder.phase_scale
            ));
        }
        let lambdas = self.readout.lambda.values();
        if lambdas.is_empty() {
            return bad("readout.lambda grid is empty".into());
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return bad(format!("readout.lambda {l} must be >= 0"));
        }
        if lambdas.len() > 1 && !(self.readout.holdout_fraction > 0.0 && self.readout.holdout_fraction < 1.0) {
            return bad("readout.holdout_fraction must lie in (0, 1)".into());
        }
        if let DatasetSpec::Uci { schema, .. } = &self.dataset {
            schema
                .resolve()?
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.effective_detector()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Phase levels after applying the profile.
    pub fn effective_phase_levels(&self) -> PhaseLevels {
        match (self.profile, self.encoder.phase_levels) {
            (Profile::HardwareFaithful, PhaseLevels::Continuous) => PhaseLevels::Discrete(HARDWARE_PHASE_LEVELS),
            (_, levels) => levels,
        }
    }

    /// Detector settings after applying the profile.
    pub fn effective_detector(&self) -> DetectorConfig {
        let mut d = self.detector.clone();
        if self.profile == Profile::HardwareFaithful && d.readout_levels == ReadoutLevels::Continuous {
            d.readout_levels = ReadoutLevels::Discrete(HARDWARE_READOUT_LEVELS);
        }
        d
    }

    fn effective_encoder(&self) -> EncoderSpec {
        EncoderSpec {
            phase_levels: self.effective_phase_levels(),
            ..self.encoder.clone()
        }
    }

    /// Hash of everything that determines the feature matrices.
    pub fn feature_hash(&self) -> String {
        let encoder = self.effective_encoder();
        let detector = self.effective_detector();
        let key = FeatureKey {
            dataset: &self.dataset,
            split: &self.split,
            encoder: &encoder,
            embedding: &self.embedding,
            operator: &self.operator,
            detector: &detector,
            custom_grid: match &self.embedding {
                EmbeddingKind::Custom { path } => std::fs::read(path).ok().map(|b| sha256_hex(&b)),
                _ => None,
            },
        };
        sha256_hex(serde_json::to_string(&key).expect("config serializes").as_bytes())
    }

    /// Hash of the whole pipeline: features and readout.
    pub fn config_hash(&self) -> String {
        let key = ConfigKey {
            features: self.feature_hash(),
            readout: &self.readout,
        };
        sha256_hex(serde_json::to_string(&key).expect("config serializes").as_bytes())
    }

    /// Seeds that drive this configuration.
    pub fn seeds(&self) -> SeedSet {
        SeedSet {
            split: self.split.shuffle_seed,
            embedding: match &self.embedding {
                EmbeddingKind::Noise { seed, .. } | EmbeddingKind::Fourier { seed, .. } => Some(*seed),
                _ => None,
            },
            operator: match self.operator {
                OperatorSpec::Gaussian { seed, .. } => Some(seed),
                OperatorSpec::Dft2 { .. } => None,
            },
            noise: (self.detector.noise_sigma > 0.0)
                .then_some(self.detector.noise_seed)
                .flatten(),
        }
    }

    /// Copy with every stochastic seed other than the split shifted by
    /// `offset`.
    pub fn with_seed_offset(&self, offset: u64) -> ExperimentConfig {
        let mut c = self.clone();
        match &mut c.embedding {
            EmbeddingKind::Noise { seed, .. } | EmbeddingKind::Fourier { seed, .. } => {
                *seed = seed.wrapping_add(offset)
            }
            _ => {}
        }
        if let OperatorSpec::Gaussian { seed, .. } = &mut c.operator {
            *seed = seed.wrapping_add(offset);
        }
        if let Some(seed) = &mut c.detector.noise_seed {
            *seed = seed.wrapping_add(offset);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub split: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<u64>,
}
