//! Benchmark datasets: MNIST from IDX files, mushroom and abalone from
//! delimited UCI text files, plus a generic schema-driven delimited reader.
//!
//! Every dataset is held as an `N x L` matrix with entries in `[0, 1]`.
//! MNIST pixels are divided by 255. Tabular columns are ordinal-encoded
//! (categories numbered in order of first occurrence) and min-max scaled;
//! [`split`] refits the min-max statistics on the training rows and applies
//! them to the test rows.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Learning task attached to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Task {
    Multiclass { classes: usize },
    Binary,
    Regression,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }

    /// Number of classes for classification tasks.
    pub fn classes(self) -> Option<usize> {
        match self {
            Task::Multiclass { classes } => Some(classes),
            Task::Binary => Some(2),
            Task::Regression => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class index per sample. For binary tasks, class 1 is the positive label.
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// How the feature columns were brought into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScaling {
    /// Fixed affine map (MNIST: divide by 255); never refit.
    Fixed,
    /// Per-column min-max; refit on the training split.
    MinMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub targets: Targets,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub scaling: FeatureScaling,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.samples.ncols()
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select(Axis(0), idx),
            targets: self.targets.select(idx),
            task: self.task,
            feature_names: self.feature_names.clone(),
            scaling: self.scaling,
        }
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_features() == 0 {
            return Err(DataError::Schema("dataset has no feature columns".into()));
        }
        if self.targets.len() != self.len() {
            return Err(DataError::Schema(format!(
                "{} targets for {} samples",
                self.targets.len(),
                self.len()
            )));
        }
        if self.feature_names.len() != self.n_features() {
            return Err(DataError::Schema("feature name count mismatch".into()));
        }
        if let Some(x) = self.samples.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(DataError::Schema(format!("sample value {x} outside [0, 1]")));
        }
        match (&self.targets, self.task) {
            (Targets::Classes(c), task) if task.is_classification() => {
                let k = task.classes().unwrap_or(0);
                if let Some(bad) = c.iter().find(|&&c| c >= k) {
                    return Err(DataError::Schema(format!("class {bad} outside [0, {k})")));
                }
            }
            (Targets::Values(v), Task::Regression) => {
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(DataError::Schema("non-finite regression target".into()));
                }
            }
            _ => return Err(DataError::Schema("targets do not match task".into())),
        }
        Ok(())
    }

    /// Count of samples per class (empty for regression).
    pub fn class_counts(&self) -> Vec<usize> {
        match (&self.targets, self.task.classes()) {
            (Targets::Classes(c), Some(k)) => {
                let mut counts = vec![0; k];
                for &ci in c {
                    counts[ci] += 1;
                }
                counts
            }
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// IDX (MNIST)

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parse an IDX header with the given magic number; returns the dimensions and
/// the payload slice.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| be_u32(bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok((dims, &payload[..expected]))
}

/// Load an MNIST-style pair of IDX files (`idx3` images, `idx1` labels).
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (dims, pixels) = parse_idx(&image_bytes, IDX_IMAGES_MAGIC, images_path)?;
    let (ldims, labels) = parse_idx(&label_bytes, IDX_LABELS_MAGIC, labels_path)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: ldims[0],
        });
    }
    if n == 0 {
        return Err(DataError::Empty);
    }
    let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    if let Some(pos) = classes.iter().position(|&c| c >= 10) {
        return Err(DataError::Parse {
            path: labels_path.to_path_buf(),
            line: pos,
            message: format!("label {} outside 0..10", classes[pos]),
        });
    }
    let samples = Array2::from_shape_vec((n, rows * cols), pixels.iter().map(|&p| f64::from(p) / 255.0).collect())
        .expect("payload length checked against dims");
    let feature_names = (0..rows * cols)
        .map(|i| format!("px{}_{}", i / cols, i % cols))
        .collect();
    Ok(Dataset {
        samples,
        targets: Targets::Classes(classes),
        task: Task::Multiclass { classes: 10 },
        feature_names,
        scaling: FeatureScaling::Fixed,
    })
}

/// Side lengths of the images in an IDX image file.
pub fn idx_image_shape(images_path: &Path) -> Result<(usize, usize), DataError> {
    let bytes = read_file(images_path)?;
    let (dims, _) = parse_idx(&bytes, IDX_IMAGES_MAGIC, images_path)?;
    Ok((dims[1], dims[2]))
}

// ---------------------------------------------------------------------------
// Delimited UCI text

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
    TargetClass,
    TargetReal,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Delimiter {
    #[default]
    Comma,
    Semicolon,
    Tab,
    Whitespace,
}

impl Delimiter {
    fn split<'a>(self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Semicolon => line.split(';').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

/// Column layout of a delimited file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub delimiter: Delimiter,
    /// First non-empty line holds column names.
    #[serde(default)]
    pub header: bool,
    pub columns: Vec<ColumnKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl Schema {
    /// UCI `agaricus-lepiota.data`: class label first, then 22 categorical
    /// attributes; `?` marks a missing value and is kept as its own category.
    pub fn mushroom() -> Schema {
        let names = [
            "class",
            "cap-shape",
            "cap-surface",
            "cap-color",
            "bruises",
            "odor",
            "gill-attachment",
            "gill-spacing",
            "gill-size",
            "gill-color",
            "stalk-shape",
            "stalk-root",
            "stalk-surface-above-ring",
            "stalk-surface-below-ring",
            "stalk-color-above-ring",
            "stalk-color-below-ring",
            "veil-type",
            "veil-color",
            "ring-number",
            "ring-type",
            "spore-print-color",
            "population",
            "habitat",
        ];
        let mut columns = vec![ColumnKind::TargetClass];
        columns.extend(std::iter::repeat_n(ColumnKind::Categorical, 22));
        Schema {
            delimiter: Delimiter::Comma,
            header: false,
            columns,
            names: Some(names.iter().map(|s| s.to_string()).collect()),
        }
    }

    /// UCI `abalone.data`: sex (categorical), seven numeric measurements, and
    /// the ring count as a real target.
    pub fn abalone() -> Schema {
        let names = [
            "sex",
            "length",
            "diameter",
            "height",
            "whole-weight",
            "shucked-weight",
            "viscera-weight",
            "shell-weight",
            "rings",
        ];
        let mut columns = vec![ColumnKind::Categorical];
        columns.extend(std::iter::repeat_n(ColumnKind::Numeric, 7));
        columns.push(ColumnKind::TargetReal);
        Schema {
            delimiter: Delimiter::Comma,
            header: false,
            columns,
            names: Some(names.iter().map(|s| s.to_string()).collect()),
        }
    }

    /// Check the column kinds; returns the index of the target column.
    pub fn validate(&self) -> Result<usize, DataError> {
        let targets: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, ColumnKind::TargetClass | ColumnKind::TargetReal))
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(DataError::Schema(format!(
                "exactly one target column required, found {}",
                targets.len()
            )));
        }
        if !self
            .columns
            .iter()
            .any(|k| matches!(k, ColumnKind::Categorical | ColumnKind::Numeric))
        {
            return Err(DataError::Schema("no feature columns".into()));
        }
        if let Some(names) = &self.names {
            if names.len() != self.columns.len() {
                return Err(DataError::Schema(format!(
                    "{} names for {} columns",
                    names.len(),
                    self.columns.len()
                )));
            }
        }
        Ok(targets[0])
    }
}

/// Per-column min-max statistics. Constant columns map to 0.5; values outside
/// the fitted range are clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> MinMaxScaler {
        let mut min = vec![f64::INFINITY; x.ncols()];
        let mut max = vec![f64::NEG_INFINITY; x.ncols()];
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 {
                    ((*v - self.min[j]) / span).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
    }
}

/// Category tables and scaling learned from a delimited file, reusable for a
/// separate test file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEncoding {
    /// Known categories per feature column (`None` for numeric columns).
    pub categories: Vec<Option<Vec<String>>>,
    /// Class labels in code order, for classification targets.
    pub classes: Option<Vec<String>>,
    pub scaler: MinMaxScaler,
}

/// Result of reading a delimited file.
#[derive(Debug, Clone)]
pub struct UciLoad {
    pub dataset: Dataset,
    pub encoding: TableEncoding,
    /// Feature cells whose category was not in the supplied encoding.
    pub unknown_categories: usize,
}

/// Read a delimited file, fitting category codes and scaling on its rows.
pub fn load_uci_csv(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    load_uci_csv_with(path, schema, None).map(|l| l.dataset)
}

/// Read a delimited file. With `encoding`, categories and scaling fitted
/// elsewhere are reused: an unseen category takes the next ordinal code,
/// clamped to the largest known one, and is counted in `unknown_categories`.
pub fn load_uci_csv_with(path: &Path, schema: &Schema, encoding: Option<&TableEncoding>) -> Result<UciLoad, DataError> {
    let target_col = schema.validate()?;
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let feature_cols: Vec<usize> = schema
        .columns
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, ColumnKind::Categorical | ColumnKind::Numeric))
        .map(|(i, _)| i)
        .collect();
    let is_class = schema.columns[target_col] == ColumnKind::TargetClass;

    // Category tables, either fitted here or taken from `encoding`.
    let mut tables: Vec<Option<CategoryTable>> = match encoding {
        Some(enc) => {
            if enc.categories.len() != feature_cols.len() {
                return Err(DataError::Schema(
                    "encoding does not match schema feature columns".into(),
                ));
            }
            enc.categories
                .iter()
                .map(|c| c.as_ref().map(|v| CategoryTable::frozen(v)))
                .collect()
        }
        None => feature_cols
            .iter()
            .map(|&c| (schema.columns[c] == ColumnKind::Categorical).then(CategoryTable::default))
            .collect(),
    };
    let mut class_table = match encoding.and_then(|e| e.classes.as_ref()) {
        Some(c) => CategoryTable::frozen(c),
        None => CategoryTable::default(),
    };

    let mut names: Option<Vec<String>> = schema.names.clone();
    let mut values = Vec::new();
    let mut class_targets = Vec::new();
    let mut real_targets = Vec::new();
    let mut unknown = 0usize;
    let mut header_pending = schema.header;
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields = schema.delimiter.split(line);
        if fields.len() != schema.columns.len() {
            return Err(parse_err(
                lineno + 1,
                format!("expected {} fields, found {}", schema.columns.len(), fields.len()),
            ));
        }
        if header_pending {
            header_pending = false;
            if names.is_none() {
                names = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            continue;
        }
        for (slot, &c) in feature_cols.iter().enumerate() {
            let raw = fields[c];
            let v = match &mut tables[slot] {
                Some(table) => {
                    let (code, known) = table.code(raw);
                    if !known {
                        unknown += 1;
                    }
                    code as f64
                }
                None => raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(lineno + 1, format!("column {c}: '{raw}' is not a number")))?,
            };
            values.push(v);
        }
        let raw = fields[target_col];
        if is_class {
            let (code, known) = class_table.code(raw);
            if !known {
                return Err(parse_err(lineno + 1, format!("unknown class label '{raw}'")));
            }
            class_targets.push(code);
        } else {
            let t = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(lineno + 1, format!("target '{raw}' is not a number")))?;
            real_targets.push(t);
        }
    }

    let n = values.len() / feature_cols.len();
    if n == 0 {
        return Err(DataError::Empty);
    }
    let mut samples = Array2::from_shape_vec((n, feature_cols.len()), values).expect("row length checked per line");
    let scaler = match encoding {
        Some(enc) => enc.scaler.clone(),
        None => MinMaxScaler::fit(samples.view()),
    };
    scaler.apply(&mut samples);

    let feature_names = match &names {
        Some(all) => feature_cols.iter().map(|&c| all[c].clone()).collect(),
        None => feature_cols.iter().map(|c| format!("col{c}")).collect(),
    };
    let (targets, task) = if is_class {
        let k = class_table.labels.len();
        let task = if k == 2 {
            Task::Binary
        } else {
            Task::Multiclass { classes: k }
        };
        (Targets::Classes(class_targets), task)
    } else {
        (Targets::Values(real_targets), Task::Regression)
    };
    let dataset = Dataset {
        samples,
        targets,
        task,
        feature_names,
        scaling: FeatureScaling::MinMax,
    };
    let encoding = TableEncoding {
        categories: tables.into_iter().map(|t| t.map(|t| t.labels)).collect(),
        classes: is_class.then_some(class_table.labels),
        scaler,
    };
    Ok(UciLoad {
        dataset,
        encoding,
        unknown_categories: unknown,
    })
}

#[derive(Debug, Default)]
struct CategoryTable {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl CategoryTable {
    fn frozen(labels: &[String]) -> CategoryTable {
        CategoryTable {
            labels: labels.to_vec(),
            index: labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect(),
            frozen: true,
        }
    }

    /// Code for `raw` and whether it was already known (or could be added).
    fn code(&mut self, raw: &str) -> (usize, bool) {
        if let Some(&c) = self.index.get(raw) {
            return (c, true);
        }
        if self.frozen {
            // Next ordinal code would be `labels.len()`; clamp into range.
            return (self.labels.len().saturating_sub(1), false);
        }
        let c = self.labels.len();
        self.labels.push(raw.to_string());
        self.index.insert(raw.to_string(), c);
        (c, true)
    }
}

// ---------------------------------------------------------------------------
// Splitting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub shuffle_seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

/// Deterministically split `dataset` into train and test parts.
///
/// Min-max scaled datasets are rescaled with statistics of the training rows;
/// test rows are mapped with the same statistics (clamped to `[0, 1]`).
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    split_with_scaler(dataset, spec).map(|(train, test, _)| (train, test))
}

/// [`split`], also returning the scaler fitted on the training rows (for
/// min-max scaled datasets).
pub fn split_with_scaler(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Option<MinMaxScaler>), DataError> {
    let n = dataset.len();
    if spec.n_train == 0 || spec.n_train + spec.n_test > n {
        return Err(DataError::SplitTooLarge {
            n_train: spec.n_train,
            n_test: spec.n_test,
            available: n,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));

    let (train_idx, test_idx) = match (&dataset.targets, spec.stratified) {
        (Targets::Classes(classes), true) => {
            let order = stratified_order(&perm, classes);
            let train: Vec<usize> = order[..spec.n_train].to_vec();
            let rest = stratified_order(&order[spec.n_train..], classes);
            (train, rest[..spec.n_test].to_vec())
        }
        _ => (
            perm[..spec.n_train].to_vec(),
            perm[spec.n_train..spec.n_train + spec.n_test].to_vec(),
        ),
    };

    let mut train = dataset.subset(&train_idx);
    let mut test = dataset.subset(&test_idx);
    let scaler = (dataset.scaling == FeatureScaling::MinMax).then(|| {
        let scaler = MinMaxScaler::fit(train.samples.view());
        scaler.apply(&mut train.samples);
        scaler.apply(&mut test.samples);
        scaler
    });
    Ok((train, test, scaler))
}

/// Reorder `idx` so that every prefix holds each class in proportion to its
/// frequency (within one sample): the k-th member of a class with `n_c`
/// members sorts at position `(k + 1/2) / n_c`.
fn stratified_order(idx: &[usize], classes: &[usize]) -> Vec<usize> {
    let k = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut totals = vec![0usize; k];
    for &i in idx {
        totals[classes[i]] += 1;
    }
    let mut seen = vec![0usize; k];
    let mut keyed: Vec<(f64, usize, usize)> = idx
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let c = classes[i];
            let rank = seen[c];
            seen[c] += 1;
            ((rank as f64 + 0.5) / totals[c] as f64, pos, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Locations of the four standard MNIST files inside `dir`.
pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend(n.to_be_bytes());
        b.extend(rows.to_be_bytes());
        b.extend(cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_LABELS_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn single_blank_digit() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(1, 28, 28, &[0u8; 784]));
        let lab = write(dir.path(), "lab", &idx_labels(&[7]));
        let ds = load_mnist(&img, &lab).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.n_features(), 784);
        assert!(ds.samples.iter().all(|&v| v == 0.0));
        assert_eq!(ds.targets, Targets::Classes(vec![7]));
        assert_eq!(ds.task, Task::Multiclass { classes: 10 });
        ds.validate().unwrap();
    }

    #[test]
    fn pixels_scaled_by_255() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "img", &idx_images(1, 1, 3, &[0, 51, 255]));
        let lab = write(dir.path(), "lab", &idx_labels(&[1]));
        let ds = load_mnist(&img, &lab).unwrap();
        assert_eq!(ds.samples.row(0).to_vec(), vec![0.0, 0.2, 1.0]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let good_img = write(dir.path(), "img", &idx_images(2, 2, 2, &[0u8; 8]));
        let good_lab = write(dir.path(), "lab", &idx_labels(&[1, 2]));

        let swapped = load_mnist(&good_lab, &good_img).unwrap_err();
        assert!(matches!(swapped, DataError::BadMagic { found: 0x801, .. }));

        let short = write(dir.path(), "short", &idx_images(2, 2, 2, &[0u8; 5]));
        let err = load_mnist(&short, &good_lab).unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                expected: 8,
                found: 5,
                ..
            }
        ));

        let three = write(dir.path(), "three", &idx_labels(&[1, 2, 3]));
        let err = load_mnist(&good_img, &three).unwrap_err();
        assert!(matches!(err, DataError::CountMismatch { images: 2, labels: 3 }));

        let header_only = write(dir.path(), "hdr", &[0, 0, 8]);
        assert!(matches!(
            load_mnist(&header_only, &good_lab).unwrap_err(),
            DataError::Truncated { .. }
        ));
    }

    #[test]
    fn two_row_categorical_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.csv", b"a,1.5\nb,2.5\n");
        let schema = Schema {
            delimiter: Delimiter::Comma,
            header: false,
            columns: vec![ColumnKind::Categorical, ColumnKind::TargetReal],
            names: None,
        };
        let load = load_uci_csv_with(&p, &schema, None).unwrap();
        assert_eq!(load.dataset.samples.column(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(load.dataset.targets, Targets::Values(vec![1.5, 2.5]));
        assert_eq!(load.dataset.task, Task::Regression);
        assert_eq!(
            load.encoding.categories[0],
            Some(vec!["a".to_string(), "b".to_string()])
        );
    }

    #[test]
    fn constant_column_and_missing_marker() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", b"p,x,?\ne,x,s\np,x,?\n");
        let schema = Schema {
            delimiter: Delimiter::Comma,
            header: false,
            columns: vec![
                ColumnKind::TargetClass,
                ColumnKind::Categorical,
                ColumnKind::Categorical,
            ],
            names: None,
        };
        let ds = load_uci_csv(&p, &schema).unwrap();
        assert_eq!(ds.task, Task::Binary);
        assert_eq!(ds.samples.column(0).to_vec(), vec![0.5, 0.5, 0.5]);
        // "?" is the first category seen, so it gets code 0.
        assert_eq!(ds.samples.column(1).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(ds.targets, Targets::Classes(vec![0, 1, 0]));
    }

    #[test]
    fn unknown_test_category_clamps_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "tr.csv", b"a,1\nb,2\nc,3\n");
        let test = write(dir.path(), "te.csv", b"b,1\nz,2\n");
        let schema = Schema {
            delimiter: Delimiter::Comma,
            header: false,
            columns: vec![ColumnKind::Categorical, ColumnKind::TargetReal],
            names: None,
        };
        let fitted = load_uci_csv_with(&train, &schema, None).unwrap();
        let applied = load_uci_csv_with(&test, &schema, Some(&fitted.encoding)).unwrap();
        assert_eq!(applied.unknown_categories, 1);
        assert_eq!(applied.dataset.samples.column(0).to_vec(), vec![0.5, 1.0]);
    }

    #[test]
    fn unparseable_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", b"1.0 2\nfoo 3\n");
        let schema = Schema {
            delimiter: Delimiter::Whitespace,
            header: false,
            columns: vec![ColumnKind::Numeric, ColumnKind::TargetReal],
            names: None,
        };
        let err = load_uci_csv(&p, &schema).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
        let p = write(dir.path(), "ragged.csv", b"1.0 2\n3\n");
        assert!(matches!(
            load_uci_csv(&p, &schema).unwrap_err(),
            DataError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn header_names_are_used() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", b"w;y\n0;1\n2;3\n");
        let schema = Schema {
            delimiter: Delimiter::Semicolon,
            header: true,
            columns: vec![ColumnKind::Numeric, ColumnKind::TargetReal],
            names: None,
        };
        let ds = load_uci_csv(&p, &schema).unwrap();
        assert_eq!(ds.feature_names, vec!["w".to_string()]);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn schema_needs_one_target() {
        let bad = Schema {
            delimiter: Delimiter::Comma,
            header: false,
            columns: vec![ColumnKind::Numeric, ColumnKind::Numeric],
            names: None,
        };
        assert!(matches!(bad.validate(), Err(DataError::Schema(_))));
        assert_eq!(Schema::mushroom().columns.len(), 23);
        assert_eq!(Schema::abalone().columns.len(), 9);
    }

    fn toy(n: usize, k: usize) -> Dataset {
        let samples = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        Dataset {
            samples,
            targets: Targets::Classes((0..n).map(|i| (i * i + 1) % k).collect()),
            task: Task::Multiclass { classes: k },
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            scaling: FeatureScaling::Fixed,
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(100, 3);
        let spec = SplitSpec {
            n_train: 60,
            n_test: 30,
            shuffle_seed: 9,
            stratified: false,
        };
        let (a, b) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len()), (60, 30));
        let (a2, b2) = split(&ds, &spec).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn split_without_test_is_a_permutation() {
        let ds = toy(50, 2);
        let spec = SplitSpec {
            n_train: 50,
            n_test: 0,
            shuffle_seed: 1,
            stratified: true,
        };
        let (train, test) = split(&ds, &spec).unwrap();
        assert!(test.is_empty());
        let mut a: Vec<Vec<u64>> = rows_bits(&train);
        let mut b: Vec<Vec<u64>> = rows_bits(&ds);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_oversized_request() {
        let ds = toy(10, 2);
        let spec = SplitSpec {
            n_train: 8,
            n_test: 3,
            shuffle_seed: 0,
            stratified: false,
        };
        assert!(matches!(
            split(&ds, &spec),
            Err(DataError::SplitTooLarge { available: 10, .. })
        ));
    }

    #[test]
    fn minmax_split_uses_train_statistics() {
        let samples = Array2::from_shape_vec((4, 1), vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let ds = Dataset {
            samples,
            targets: Targets::Values(vec![0.0, 1.0, 2.0, 3.0]),
            task: Task::Regression,
            feature_names: vec!["x".into()],
            scaling: FeatureScaling::MinMax,
        };
        let spec = SplitSpec {
            n_train: 2,
            n_test: 2,
            shuffle_seed: 4,
            stratified: false,
        };
        let (train, test) = split(&ds, &spec).unwrap();
        let tr: Vec<f64> = train.samples.column(0).to_vec();
        assert!(tr.contains(&0.0) && tr.contains(&1.0));
        assert!(test.samples.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    pub(super) fn rows_bits(ds: &Dataset) -> Vec<Vec<u64>> {
        ds.samples
            .rows()
            .into_iter()
            .zip(match &ds.targets {
                Targets::Classes(c) => c.iter().map(|&c| c as u64).collect::<Vec<_>>(),
                Targets::Values(v) => v.iter().map(|v| v.to_bits()).collect(),
            })
            .map(|(r, t)| {
                let mut v: Vec<u64> = r.iter().map(|x| x.to_bits()).collect();
                v.push(t);
                v
            })
            .collect()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn split_round_trip(n in 2usize..80, frac in 0.05f64..1.0, seed in any::<u64>(), strat in any::<bool>()) {
                let ds = toy(n, 3);
                let n_train = ((n as f64 * frac) as usize).clamp(1, n);
                let spec = SplitSpec { n_train, n_test: n - n_train, shuffle_seed: seed, stratified: strat };
                let (a, b) = split(&ds, &spec).unwrap();
                let mut joined = rows_bits(&a);
                joined.extend(rows_bits(&b));
                joined.sort();
                let mut orig = rows_bits(&ds);
                orig.sort();
                prop_assert_eq!(joined, orig);
            }

            #[test]
            fn stratified_train_frequencies(n in 10usize..300, frac in 0.1f64..0.9, seed in any::<u64>(), k in 2usize..6) {
                let ds = toy(n, k);
                let n_train = ((n as f64 * frac) as usize).max(1);
                let spec = SplitSpec { n_train, n_test: n - n_train, shuffle_seed: seed, stratified: true };
                let (train, test) = split(&ds, &spec).unwrap();
                let global = ds.class_counts();
                for (c, &cnt) in train.class_counts().iter().enumerate() {
                    let expected = n_train as f64 * global[c] as f64 / n as f64;
                    prop_assert!((cnt as f64 - expected).abs() <= 1.0 + 1e-9,
                        "class {c}: {cnt} vs {expected}");
                }
                let rest: Vec<usize> = global.iter().zip(train.class_counts()).map(|(g, t)| g - t).collect();
                let n_rest: usize = rest.iter().sum();
                for (c, &cnt) in test.class_counts().iter().enumerate() {
                    let expected = test.len() as f64 * rest[c] as f64 / n_rest as f64;
                    prop_assert!((cnt as f64 - expected).abs() <= 1.0 + 1e-9);
                }
            }

            #[test]
            fn minmax_is_idempotent(vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
                let mut x = Array2::from_shape_vec((4, 3), vals).unwrap();
                MinMaxScaler::fit(x.view()).apply(&mut x);
                let once = x.clone();
                MinMaxScaler::fit(x.view()).apply(&mut x);
                for (a, b) in once.iter().zip(x.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
