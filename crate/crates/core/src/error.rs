use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading or preparing a dataset.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated file, expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("requested split {n_train}+{n_test} exceeds {available} samples")]
    SplitTooLarge {
        n_train: usize,
        n_test: usize,
        available: usize,
    },
    #[error("dataset is empty")]
    Empty,
}

/// Invalid encoder, embedding, propagation or detector parameters.
#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("noise amplitude {0} outside [0, pi]")]
    Amplitude(f64),
    #[error("correlation length {length} outside [1, {side}]")]
    CorrelationLength { length: usize, side: usize },
    #[error("fourier embedding needs at least one frequency")]
    NoFrequencies,
    #[error("fourier embedding expects {expected} phases, got {found}")]
    PhaseCount { expected: usize, found: usize },
    #[error("embedding value {0} outside [0, pi]")]
    EmbeddingRange(f64),
    #[error("grid mismatch: expected side {expected}, found {found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("sample has {found} attributes, layout expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid encoder configuration: {0}")]
    Encoder(String),
    #[error("invalid detector configuration: {0}")]
    Detector(String),
    #[error("channel layout does not fit the {side}x{side} detector grid: {reason}")]
    ChannelsOutOfBounds { side: usize, reason: String },
    #[error("custom embedding grid: {0}")]
    CustomGrid(String),
}

/// Failures of the linear readout.
#[derive(Debug, Error, PartialEq)]
pub enum ReadoutError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("regularization must be >= 0, got {0}")]
    NegativeLambda(f64),
    #[error("normal equations are singular at lambda = 0; use a positive lambda")]
    Singular,
    #[error("target range is degenerate (max == min), NRMSD undefined")]
    DegenerateRange,
    #[error("empty input")]
    Empty,
}
