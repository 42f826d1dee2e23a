//! Single experiments: load, split, build features, fit the readout, score.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    idx_image_shape, load_mnist, load_uci_csv_with, mnist_paths, split, split_with_scaler, Dataset, MinMaxScaler,
    SplitSpec, TableEncoding,
};
use crate::detection::{Detector, Saturation};
use crate::encoder::{build_embedding, EncoderConfig, GridLayout};
use crate::error::DataError;
use crate::features::{
    calibrate_saturation, read_features_binary, write_features_binary, FeatureMatrix, OpticalPipeline,
};
use crate::parallel::Execution;
use crate::propagation::TransferOperator;
use crate::readout::{evaluate, fit_with_holdout, predict, LambdaScore, Metrics, ReadoutModel};

use super::config::{DatasetSpec, ExperimentConfig, LayoutSpec, SeedSet};
use super::{AtStage, FailureClass, HarnessError, Stage};

/// Noise streams of test rows start here; training rows use their row index.
pub const TEST_STREAM_BASE: u64 = 1 << 40;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Train and test rows ready for the optical pipeline.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Category codes and load-time scaling of a delimited file.
    pub table: Option<TableEncoding>,
    /// Scaling refitted on the training rows.
    pub train_scaler: Option<MinMaxScaler>,
    pub image_shape: Option<(usize, usize)>,
}

fn empty_like(d: &Dataset) -> Dataset {
    d.subset(&[])
}

/// Load and split the dataset named by `cfg`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData, HarnessError> {
    match &cfg.dataset {
        DatasetSpec::Mnist { dir } => {
            let [tr_img, tr_lab, te_img, te_lab] = mnist_paths(dir);
            let train_file = load_mnist(&tr_img, &tr_lab).at(Stage::Load)?;
            let test_file = load_mnist(&te_img, &te_lab).at(Stage::Load)?;
            let image_shape = idx_image_shape(&tr_img).at(Stage::Load)?;
            let pick = |file: &Dataset, n: usize| -> Result<Dataset, HarnessError> {
                if n == 0 {
                    return Ok(empty_like(file));
                }
                let spec = SplitSpec {
                    n_train: n,
                    n_test: 0,
                    ..cfg.split
                };
                split(file, &spec).map(|(rows, _)| rows).at(Stage::Split)
            };
            Ok(LoadedData {
                train: pick(&train_file, cfg.split.n_train)?,
                test: pick(&test_file, cfg.split.n_test)?,
                table: None,
                train_scaler: None,
                image_shape: Some(image_shape),
            })
        }
        DatasetSpec::Uci { path, schema } => {
            let schema = schema.resolve()?;
            let loaded = load_uci_csv_with(path, &schema, None).at(Stage::Load)?;
            let (train, test, scaler) = split_with_scaler(&loaded.dataset, &cfg.split).at(Stage::Split)?;
            Ok(LoadedData {
                train,
                test,
                table: Some(loaded.encoding),
                train_scaler: scaler,
                image_shape: None,
            })
        }
    }
}

fn grid_layout(
    spec: &LayoutSpec,
    attributes: usize,
    image_shape: Option<(usize, usize)>,
) -> Result<GridLayout, HarnessError> {
    match *spec {
        LayoutSpec::Replicated { cell, rows, cols } => {
            let (r, c) = match (rows, cols, image_shape) {
                (Some(r), Some(c), _) => (r, c),
                (None, None, Some(shape)) => shape,
                (None, None, None) => {
                    let s = (attributes as f64).sqrt().round() as usize;
                    if s * s != attributes {
                        return Err(HarnessError::Config(format!(
                            "{attributes} attributes are not a square image; set rows and cols"
                        )));
                    }
                    (s, s)
                }
                _ => return Err(HarnessError::Config("set both rows and cols".into())),
            };
            if r * c != attributes {
                return Err(HarnessError::Config(format!(
                    "a {r}x{c} image does not hold {attributes} attributes"
                )));
            }
            GridLayout::replicated(r, c, cell).at(Stage::Layout)
        }
        LayoutSpec::Tiled { side } => GridLayout::tiled(attributes, side).at(Stage::Layout),
    }
}

/// Assemble the optical pipeline. With auto exposure and no `i_sat`, the
/// saturation intensity is calibrated on the leading training rows.
pub fn build_pipeline(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    i_sat: Option<f64>,
    exec: Execution,
) -> Result<(OpticalPipeline, Option<f64>), HarnessError> {
    let layout = grid_layout(&cfg.encoder.layout, data.train.n_features(), data.image_shape)?;
    let encoder = EncoderConfig {
        phase_scale: cfg.encoder.phase_scale,
        phase_levels: cfg.effective_phase_levels(),
        layout,
    };
    encoder.validate().at(Stage::Layout)?;
    let embedding = build_embedding(&cfg.embedding, encoder.side()).at(Stage::Embedding)?;
    let operator = TransferOperator::build(&cfg.operator, encoder.side()).at(Stage::Operator)?;
    let det_cfg = cfg.effective_detector();
    let i_sat = match (det_cfg.saturation, i_sat) {
        (Saturation::Auto, None) => Some(
            calibrate_saturation(
                &encoder,
                &embedding,
                &operator,
                &det_cfg,
                data.train.samples.view(),
                exec,
            )
            .at(Stage::Calibration)?,
        ),
        (Saturation::Auto, given) => given,
        _ => None,
    };
    let detector = Detector::new(&det_cfg, operator.out_side(), i_sat).at(Stage::Detector)?;
    let pipeline = OpticalPipeline::new(encoder, embedding, operator, detector).at(Stage::Detector)?;
    Ok((pipeline, i_sat))
}

/// Hidden-layer matrices of the training and test rows.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    /// Calibrated saturation intensity, for auto exposure.
    pub i_sat: Option<f64>,
    pub seconds: f64,
    pub from_cache: bool,
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    i_sat: Option<f64>,
}

fn cache_paths(dir: &Path, hash: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{hash}.train.bin")),
        dir.join(format!("{hash}.test.bin")),
        dir.join(format!("{hash}.json")),
    ]
}

fn read_cache(dir: &Path, hash: &str) -> Option<(FeatureMatrix, FeatureMatrix, Option<f64>)> {
    let [tr, te, meta] = cache_paths(dir, hash);
    let meta: CacheMeta = serde_json::from_slice(&std::fs::read(meta).ok()?).ok()?;
    let train = read_features_binary(&tr).ok()?;
    let test = read_features_binary(&te).ok()?;
    (train.provenance == hash && test.provenance == hash).then_some((train, test, meta.i_sat))
}

fn write_cache(dir: &Path, set: &FeatureSet) -> Result<(), HarnessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let [tr, te, meta] = cache_paths(dir, &set.train.provenance);
    write_features_binary(&tr, &set.train)?;
    write_features_binary(&te, &set.test)?;
    let json = serde_json::to_vec(&CacheMeta { i_sat: set.i_sat }).expect("meta serializes");
    std::fs::write(&meta, json).map_err(io(&meta))
}

/// Build (or load from the feature cache) the feature matrices for `data`.
pub fn compute_features(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    exec: Execution,
) -> Result<FeatureSet, HarnessError> {
    let start = Instant::now();
    let hash = cfg.feature_hash();
    if let Some(dir) = &cfg.output.feature_cache {
        if let Some((train, test, i_sat)) = read_cache(dir, &hash) {
            log::info!("features {hash} loaded from cache");
            return Ok(FeatureSet {
                train,
                test,
                i_sat,
                seconds: start.elapsed().as_secs_f64(),
                from_cache: true,
            });
        }
    }
    let (pipeline, i_sat) = build_pipeline(cfg, data, None, exec)?;
    log::info!(
        "building features: {} train + {} test rows, {} channels",
        data.train.len(),
        data.test.len(),
        pipeline.channels()
    );
    let train = pipeline.build(data.train.samples.view(), 0, exec).at(Stage::Features)?;
    let test = pipeline
        .build(data.test.samples.view(), TEST_STREAM_BASE, exec)
        .at(Stage::Features)?;
    let set = FeatureSet {
        train: FeatureMatrix {
            values: train,
            provenance: hash.clone(),
        },
        test: FeatureMatrix {
            values: test,
            provenance: hash,
        },
        i_sat,
        seconds: start.elapsed().as_secs_f64(),
        from_cache: false,
    };
    if let Some(dir) = &cfg.output.feature_cache {
        write_cache(dir, &set)?;
    }
    Ok(set)
}

/// Fit the readout on the training features, choosing `lambda` on held-out
/// rows when the configuration gives a grid.
pub fn fit_readout(
    cfg: &ExperimentConfig,
    features: &FeatureSet,
    data: &LoadedData,
    exec: Execution,
) -> Result<(ReadoutModel, Vec<LambdaScore>), HarnessError> {
    let fit = fit_with_holdout(
        features.train.values.view(),
        &data.train.targets,
        data.train.task,
        &cfg.readout.lambda.values(),
        cfg.readout.holdout_fraction,
        &cfg.config_hash(),
        exec,
    )
    .at(Stage::Readout)?;
    Ok((fit.model, fit.scores))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub features_s: f64,
    pub readout_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "state")]
pub enum RunStatus {
    Ok,
    Failed {
        stage: String,
        class: FailureClass,
        message: String,
    },
}

/// Outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis_value: Option<f64>,
    pub repeat: usize,
    pub status: RunStatus,
    pub config_hash: String,
    pub feature_hash: String,
    pub seeds: SeedSet,
    pub n_train: usize,
    pub n_test: usize,
    pub m_channels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda_scores: Vec<LambdaScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_sat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<Metrics>,
    pub timing: Timing,
}

impl RunRecord {
    pub(crate) fn pending(cfg: &ExperimentConfig, data: &LoadedData) -> RunRecord {
        RunRecord {
            name: cfg.name.clone(),
            axis: None,
            axis_value: None,
            repeat: 0,
            status: RunStatus::Ok,
            config_hash: cfg.config_hash(),
            feature_hash: cfg.feature_hash(),
            seeds: cfg.seeds(),
            n_train: data.train.len(),
            n_test: data.test.len(),
            m_channels: cfg.detector.channels.m_channels,
            lambda: None,
            lambda_scores: Vec::new(),
            i_sat: None,
            train: None,
            test: None,
            timing: Timing::default(),
        }
    }

    pub(crate) fn fail(mut self, err: &HarnessError) -> RunRecord {
        self.status = RunStatus::Failed {
            stage: err.stage().map_or_else(|| "config".to_string(), |s| s.to_string()),
            class: err.class(),
            message: err.to_string(),
        };
        self
    }

    /// Test error (1 - accuracy, or NRMSD for regression); falls back to the
    /// training error when there is no test split.
    pub fn error(&self) -> Option<f64> {
        let m = self.test.as_ref().or(self.train.as_ref())?;
        m.error_rate().or(m.nrmsd)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Score `model` on both splits and fill in `record`.
pub(crate) fn score_into(
    record: &mut RunRecord,
    model: &ReadoutModel,
    features: &FeatureSet,
    data: &LoadedData,
) -> Result<(), HarnessError> {
    let y = predict(features.train.values.view(), model).at(Stage::Evaluate)?;
    record.train = Some(evaluate(y.view(), &data.train.targets, data.train.task).at(Stage::Evaluate)?);
    if !data.test.is_empty() {
        let y = predict(features.test.values.view(), model).at(Stage::Evaluate)?;
        record.test = Some(evaluate(y.view(), &data.test.targets, data.test.task).at(Stage::Evaluate)?);
    }
    record.lambda = Some(model.lambda);
    record.i_sat = features.i_sat;
    Ok(())
}

/// All runs of an experiment or sweep, plus the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub runs: Vec<RunRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<super::SweepSummary>,
}

/// Everything needed to replay inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub feature_hash: String,
    /// Saturation intensity found by auto exposure.
    pub i_sat: Option<f64>,
    pub table: Option<TableEncoding>,
    pub train_scaler: Option<MinMaxScaler>,
    pub image_shape: Option<(usize, usize)>,
    pub n_attributes: usize,
    pub readout: ReadoutModel,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_vec_pretty(self).expect("model serializes");
        std::fs::write(path, json).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<SavedModel, HarnessError> {
        let bytes = std::fs::read(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: SavedModel =
            serde_json::from_slice(&bytes).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(HarnessError::Format(format!(
                "{}: model format {} (expected {MODEL_FORMAT_VERSION})",
                path.display(),
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Run the experiment on already loaded data. Failures are recorded in the
/// returned record together with the failing stage.
pub fn run_loaded(cfg: &ExperimentConfig, data: &LoadedData) -> (RunRecord, Option<SavedModel>) {
    let record = RunRecord::pending(cfg, data);
    match run_inner(cfg, data, record.clone()) {
        Ok(done) => done,
        Err(e) => {
            log::warn!("run {} failed: {e}", cfg.name);
            (record.fail(&e), None)
        }
    }
}

fn run_inner(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    mut record: RunRecord,
) -> Result<(RunRecord, Option<SavedModel>), HarnessError> {
    let start = Instant::now();
    let exec = cfg.execution;
    let features = compute_features(cfg, data, exec)?;
    let t_readout = Instant::now();
    let (model, scores) = fit_readout(cfg, &features, data, exec)?;
    record.lambda_scores = scores;
    score_into(&mut record, &model, &features, data)?;
    record.timing = Timing {
        features_s: features.seconds,
        readout_s: t_readout.elapsed().as_secs_f64(),
        total_s: start.elapsed().as_secs_f64(),
    };
    let saved = SavedModel {
        format_version: MODEL_FORMAT_VERSION,
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        feature_hash: cfg.feature_hash(),
        i_sat: features.i_sat,
        table: data.table.clone(),
        train_scaler: data.train_scaler.clone(),
        image_shape: data.image_shape,
        n_attributes: data.train.n_features(),
        readout: model,
    };
    Ok((record, Some(saved)))
}

/// Load the data, run, and persist the model when requested.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunReport, Option<SavedModel>), HarnessError> {
    let data = load_data(cfg)?;
    let (record, model) = run_loaded(cfg, &data);
    if let (Some(dir), Some(model), true) = (&cfg.output.dir, &model, cfg.output.save_model) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.clone(),
            source,
        })?;
        model.save(&dir.join("model.json"))?;
    }
    Ok((
        RunReport {
            name: cfg.name.clone(),
            runs: vec![record],
            sweep: None,
        },
        model,
    ))
}

/// Evaluate a saved model. Without `data`, the test split described by the
/// saved configuration is rebuilt; otherwise every row of `data` (a
/// delimited file, or a directory with MNIST test files) is scored.
pub fn evaluate_saved(saved: &SavedModel, data: Option<&Path>) -> Result<Metrics, HarnessError> {
    let cfg = &saved.config;
    let test = match (data, &cfg.dataset) {
        (None, _) => load_data(cfg)?.test,
        (Some(dir), DatasetSpec::Mnist { .. }) => {
            let [_, _, img, lab] = mnist_paths(dir);
            load_mnist(&img, &lab).at(Stage::Load)?
        }
        (Some(path), DatasetSpec::Uci { schema, .. }) => {
            let table = saved
                .table
                .as_ref()
                .ok_or_else(|| HarnessError::Format("model has no category tables".into()))?;
            let loaded = load_uci_csv_with(path, &schema.resolve()?, Some(table)).at(Stage::Load)?;
            if loaded.unknown_categories > 0 {
                log::warn!("{} cells held categories unseen in training", loaded.unknown_categories);
            }
            let mut d = loaded.dataset;
            if let Some(s) = &saved.train_scaler {
                s.apply(&mut d.samples);
            }
            d
        }
    };
    if test.is_empty() {
        return Err(HarnessError::Data {
            stage: Stage::Evaluate,
            source: DataError::Empty,
        });
    }
    if test.n_features() != saved.n_attributes {
        return Err(HarnessError::Config(format!(
            "data has {} attributes, model expects {}",
            test.n_features(),
            saved.n_attributes
        )));
    }
    let shell = LoadedData {
        train: test.subset(&[]),
        test,
        table: None,
        train_scaler: None,
        image_shape: saved.image_shape,
    };
    let (pipeline, _) = build_pipeline(cfg, &shell, saved.i_sat, cfg.execution)?;
    let h = pipeline
        .build(shell.test.samples.view(), TEST_STREAM_BASE, cfg.execution)
        .at(Stage::Features)?;
    let y = predict(h.view(), &saved.readout).at(Stage::Evaluate)?;
    evaluate(y.view(), &shell.test.targets, shell.test.task).at(Stage::Evaluate)
}
