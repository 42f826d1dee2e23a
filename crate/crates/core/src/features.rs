//! Batch feature construction: every sample goes through encode, propagate
//! and detect, giving one row of the hidden-layer matrix `H`.
//!
//! Rows are computed in fixed-size chunks. Each row depends only on its
//! sample and its global index (which selects its noise stream), so the matrix
//! is identical for any thread count or schedule.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detection::{Detector, DetectorConfig, Saturation};
use crate::encoder::{encode_into, EmbeddingMatrix, EncoderConfig};
use crate::error::OpticsError;
use crate::parallel::Execution;
use crate::propagation::TransferOperator;

/// Rows per work item.
const CHUNK_ROWS: usize = 64;

const BINARY_MAGIC: &[u8; 8] = b"PELMFEAT";
const BINARY_VERSION: u32 = 1;

/// Hidden-layer matrix: one row per sample, one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    /// Hash of the configuration that produced the features.
    pub provenance: String,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// The fixed optical part of the network: modulator, transfer operator and
/// camera, checked to agree on grid sizes.
#[derive(Debug, Clone)]
pub struct OpticalPipeline {
    pub encoder: EncoderConfig,
    pub embedding: EmbeddingMatrix,
    pub operator: TransferOperator,
    pub detector: Detector,
}

/// Reusable buffers for one worker.
struct Workspace {
    phases: Vec<f64>,
    field: Vec<Complex64>,
    far: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Workspace {
    fn new(in_side: usize, out_side: usize) -> Workspace {
        Workspace {
            phases: vec![0.0; in_side * in_side],
            field: vec![Complex64::new(0.0, 0.0); in_side * in_side],
            far: vec![Complex64::new(0.0, 0.0); out_side * out_side],
            scratch: Vec::new(),
        }
    }
}

impl OpticalPipeline {
    pub fn new(
        encoder: EncoderConfig,
        embedding: EmbeddingMatrix,
        operator: TransferOperator,
        detector: Detector,
    ) -> Result<OpticalPipeline, OpticsError> {
        encoder.validate()?;
        check_sides(&encoder, &embedding, &operator)?;
        if detector.side != operator.out_side() {
            return Err(OpticsError::GridMismatch {
                expected: operator.out_side(),
                found: detector.side,
            });
        }
        Ok(OpticalPipeline {
            encoder,
            embedding,
            operator,
            detector,
        })
    }

    pub fn channels(&self) -> usize {
        self.detector.channels()
    }

    pub fn attributes(&self) -> usize {
        self.encoder.layout.attributes()
    }

    fn workspace(&self) -> Workspace {
        Workspace::new(self.encoder.side(), self.operator.out_side())
    }

    /// Propagated field of one sample, left in `ws.far`.
    fn far_field(&self, sample: ArrayView1<'_, f64>, ws: &mut Workspace) -> Result<(), OpticsError> {
        encode_into(sample, &self.embedding, &self.encoder, &mut ws.phases, &mut ws.field)?;
        self.operator.propagate_into(&ws.field, &mut ws.far, &mut ws.scratch);
        Ok(())
    }

    fn noise_stream(&self, index: u64) -> Option<ChaCha8Rng> {
        (self.detector.noise_sigma > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.detector.noise_seed);
            rng.set_stream(index);
            rng
        })
    }

    /// Feature row of a single sample with global index `index`.
    pub fn features(&self, sample: ArrayView1<'_, f64>, index: u64) -> Result<Vec<f64>, OpticsError> {
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.channels()];
        self.row_into(sample, index, &mut ws, &mut out)?;
        Ok(out)
    }

    fn row_into(
        &self,
        sample: ArrayView1<'_, f64>,
        index: u64,
        ws: &mut Workspace,
        out: &mut [f64],
    ) -> Result<(), OpticsError> {
        self.far_field(sample, ws)?;
        let mut rng = self.noise_stream(index);
        self.detector.read_into(&ws.far, rng.as_mut(), out);
        Ok(())
    }

    fn chunk_into(
        &self,
        samples: ArrayView2<'_, f64>,
        first_index: u64,
        ws: &mut Workspace,
        mut out: ArrayViewMut2<'_, f64>,
    ) -> Result<(), OpticsError> {
        for (i, (sample, mut row)) in samples.outer_iter().zip(out.outer_iter_mut()).enumerate() {
            let row = row.as_slice_mut().expect("feature rows are contiguous");
            self.row_into(sample, first_index + i as u64, ws, row)?;
        }
        Ok(())
    }

    /// Feature matrix of `samples` (one sample per row). Row `j` uses noise
    /// stream `first_index + j`.
    pub fn build(
        &self,
        samples: ArrayView2<'_, f64>,
        first_index: u64,
        exec: Execution,
    ) -> Result<Array2<f64>, OpticsError> {
        if samples.ncols() != self.attributes() {
            return Err(OpticsError::LengthMismatch {
                expected: self.attributes(),
                found: samples.ncols(),
            });
        }
        let mut out = Array2::zeros((samples.nrows(), self.channels()));
        let chunks = samples
            .axis_chunks_iter(Axis(0), CHUNK_ROWS)
            .zip(out.axis_chunks_iter_mut(Axis(0), CHUNK_ROWS))
            .enumerate();

        #[cfg(feature = "parallel")]
        if exec.is_parallel() {
            use rayon::prelude::*;
            let work: Vec<_> = chunks.collect();
            return work
                .into_par_iter()
                .try_for_each_init(
                    || self.workspace(),
                    |ws, (c, (x, h))| self.chunk_into(x, first_index + (c * CHUNK_ROWS) as u64, ws, h),
                )
                .map(|_| out);
        }

        let _ = exec;
        let mut ws = self.workspace();
        for (c, (x, h)) in chunks {
            self.chunk_into(x, first_index + (c * CHUNK_ROWS) as u64, &mut ws, h)?;
        }
        Ok(out)
    }
}

fn check_sides(
    encoder: &EncoderConfig,
    embedding: &EmbeddingMatrix,
    operator: &TransferOperator,
) -> Result<(), OpticsError> {
    if embedding.side() != encoder.side() {
        return Err(OpticsError::GridMismatch {
            expected: encoder.side(),
            found: embedding.side(),
        });
    }
    if operator.in_side() != encoder.side() {
        return Err(OpticsError::GridMismatch {
            expected: encoder.side(),
            found: operator.in_side(),
        });
    }
    Ok(())
}

/// Auto-exposure calibration: median intensity over all channel pixels of
/// the first `config.calibration_samples` rows of `samples` (noise-free).
pub fn calibrate_saturation(
    encoder: &EncoderConfig,
    embedding: &EmbeddingMatrix,
    operator: &TransferOperator,
    config: &DetectorConfig,
    samples: ArrayView2<'_, f64>,
    exec: Execution,
) -> Result<f64, OpticsError> {
    let n = config.calibration_samples.min(samples.nrows());
    if n == 0 {
        return Err(OpticsError::Detector("no samples for auto exposure".into()));
    }
    let mut probe_cfg = config.clone();
    probe_cfg.saturation = Saturation::Linear;
    probe_cfg.noise_sigma = 0.0;
    let probe = Detector::new(&probe_cfg, operator.out_side(), None)?;
    let pipeline = OpticalPipeline::new(encoder.clone(), embedding.clone(), operator.clone(), probe)?;
    if samples.ncols() != pipeline.attributes() {
        return Err(OpticsError::LengthMismatch {
            expected: pipeline.attributes(),
            found: samples.ncols(),
        });
    }
    let rows: Vec<usize> = (0..n).collect();
    let per_sample = crate::parallel::map_ordered(exec, &rows, |&j| {
        let mut ws = pipeline.workspace();
        pipeline.far_field(samples.row(j), &mut ws)?;
        Ok::<_, OpticsError>(pipeline.detector.channel_intensities(&ws.far).collect::<Vec<f64>>())
    });
    let mut all = Vec::new();
    for v in per_sample {
        all.extend(v?);
    }
    let median = median(&mut all);
    if !(median > 0.0 && median.is_finite()) {
        return Err(OpticsError::Detector(format!(
            "auto exposure found median intensity {median}; choose a fixed saturation"
        )));
    }
    Ok(median)
}

/// Median (mean of the two central values for even counts). Reorders `v`.
fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let (_, hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        return hi;
    }
    let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (lo + hi)
}

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureFileError + '_ {
    move |source| FeatureFileError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> FeatureFileError {
    FeatureFileError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Binary layout: magic, version (u32), N and M (u64), hash length (u32) and
/// UTF-8 hash, then `N * M` little-endian f64 values row-major.
pub fn write_features_binary(path: &Path, features: &FeatureMatrix) -> Result<(), FeatureFileError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let hash = features.provenance.as_bytes();
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    put(BINARY_MAGIC)?;
    put(&BINARY_VERSION.to_le_bytes())?;
    put(&(features.rows() as u64).to_le_bytes())?;
    put(&(features.channels() as u64).to_le_bytes())?;
    put(&(hash.len() as u32).to_le_bytes())?;
    put(hash)?;
    for v in features.values.iter() {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_features_binary(path: &Path) -> Result<FeatureMatrix, FeatureFileError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut take = |n: usize| -> Result<Vec<u8>, FeatureFileError> {
        let mut b = vec![0u8; n];
        r.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => format_err(path, "truncated feature file"),
            _ => io_err(path)(e),
        })?;
        Ok(b)
    };
    if take(8)? != BINARY_MAGIC {
        return Err(format_err(path, "not a feature file"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let m = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let hash_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let provenance = String::from_utf8(take(hash_len)?).map_err(|_| format_err(path, "hash is not UTF-8"))?;
    let raw = take(n * m * 8)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix {
        values: Array2::from_shape_vec((n, m), values).expect("size checked by read"),
        provenance,
    })
}

/// Text layout: a `# pelm-features n=N m=M hash=H` line, then one
/// comma-separated row per sample with round-trip exact values.
pub fn write_features_csv(path: &Path, features: &FeatureMatrix) -> Result<(), FeatureFileError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(
        w,
        "# pelm-features n={} m={} hash={}",
        features.rows(),
        features.channels(),
        features.provenance
    )
    .map_err(io_err(path))?;
    for row in features.values.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_features_csv(path: &Path) -> Result<FeatureMatrix, FeatureFileError> {
    let r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "empty feature file"))?
        .map_err(io_err(path))?;
    let fields = header
        .strip_prefix("# pelm-features ")
        .ok_or_else(|| format_err(path, "missing feature header"))?;
    let (mut n, mut m, mut hash) = (None, None, None);
    for kv in fields.split_whitespace() {
        match kv.split_once('=') {
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("m", v)) => m = v.parse::<usize>().ok(),
            Some(("hash", v)) => hash = Some(v.to_string()),
            _ => return Err(format_err(path, format!("bad header field {kv}"))),
        }
    }
    let (n, m, provenance) = match (n, m, hash) {
        (Some(n), Some(m), Some(h)) => (n, m, h),
        _ => return Err(format_err(path, "header needs n, m and hash")),
    };
    let mut values = Vec::with_capacity(n * m);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad value {tok:?}", i + 2)))?;
            values.push(v);
        }
        if values.len() - before != m {
            return Err(format_err(path, format!("line {}: expected {m} values", i + 2)));
        }
    }
    if values.len() != n * m {
        return Err(format_err(
            path,
            format!("expected {n} rows, found {}", values.len() / m.max(1)),
        ));
    }
    Ok(FeatureMatrix {
        values: Array2::from_shape_vec((n, m), values).expect("size checked"),
        provenance,
    })
}
