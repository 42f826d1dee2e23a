//! Phase encoding of samples on a square modulator grid.
//!
//! Each attribute of a sample owns a rectangular block of cells and is written
//! there as a phase `x * phase_scale`. A fixed embedding grid `W` (values in
//! `[0, pi]`) is added to every sample and the field leaving the modulator is
//! `exp(i (X + W))`, optionally snapped to a finite number of phase levels.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::OpticsError;
use crate::levels::LevelsRepr;

/// A rectangular group of grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Block {
    fn overlaps(&self, other: &Block) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }
}

/// Assignment of attributes to blocks of a `side x side` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub side: usize,
    pub blocks: Vec<Block>,
    #[serde(default)]
    pub pad_phase: f64,
}

impl GridLayout {
    /// One `cell x cell` block per pixel of a `rows x cols` image, row-major.
    pub fn replicated(rows: usize, cols: usize, cell: usize) -> Result<GridLayout, OpticsError> {
        if rows == 0 || cols == 0 || cell == 0 {
            return Err(OpticsError::Layout("empty image or cell".into()));
        }
        let side = rows.max(cols) * cell;
        let blocks = (0..rows * cols)
            .map(|p| Block {
                row: (p / cols) * cell,
                col: (p % cols) * cell,
                height: cell,
                width: cell,
            })
            .collect();
        GridLayout::new(side, blocks, 0.0)
    }

    /// `attributes` equal-area blocks tiled row-major over a `side x side`
    /// grid; leftover cells are padding.
    pub fn tiled(attributes: usize, side: usize) -> Result<GridLayout, OpticsError> {
        if attributes == 0 {
            return Err(OpticsError::Layout("no attributes".into()));
        }
        let cols = (attributes as f64).sqrt().ceil() as usize;
        let rows = attributes.div_ceil(cols);
        let (h, w) = (side / rows, side / cols);
        if h == 0 || w == 0 {
            return Err(OpticsError::Layout(format!(
                "{attributes} attributes do not fit a {side}x{side} grid"
            )));
        }
        let blocks = (0..attributes)
            .map(|a| Block {
                row: (a / cols) * h,
                col: (a % cols) * w,
                height: h,
                width: w,
            })
            .collect();
        GridLayout::new(side, blocks, 0.0)
    }

    pub fn new(side: usize, blocks: Vec<Block>, pad_phase: f64) -> Result<GridLayout, OpticsError> {
        let layout = GridLayout {
            side,
            blocks,
            pad_phase,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if self.side == 0 || self.blocks.is_empty() {
            return Err(OpticsError::Layout("empty grid or no blocks".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.height == 0 || b.width == 0 {
                return Err(OpticsError::Layout(format!("block {i} is empty")));
            }
            if b.row + b.height > self.side || b.col + b.width > self.side {
                return Err(OpticsError::Layout(format!("block {i} leaves the grid")));
            }
        }
        // Sort by row so the overlap scan only compares nearby blocks.
        let mut order: Vec<&Block> = self.blocks.iter().collect();
        order.sort_by_key(|b| (b.row, b.col));
        for (i, a) in order.iter().enumerate() {
            for b in &order[i + 1..] {
                if b.row >= a.row + a.height {
                    break;
                }
                if a.overlaps(b) {
                    return Err(OpticsError::Layout(format!(
                        "blocks at ({}, {}) and ({}, {}) overlap",
                        a.row, a.col, b.row, b.col
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn attributes(&self) -> usize {
        self.blocks.len()
    }
}

/// Write `sample` onto the grid: attribute `j` fills its block with
/// `sample[j] * phase_scale`; other cells take the padding phase.
pub fn layout_sample(
    sample: ArrayView1<'_, f64>,
    layout: &GridLayout,
    phase_scale: f64,
) -> Result<Array2<f64>, OpticsError> {
    let mut grid = Array2::zeros((layout.side, layout.side));
    layout_into(sample, layout, phase_scale, grid.as_slice_mut().unwrap())?;
    Ok(grid)
}

fn layout_into(
    sample: ArrayView1<'_, f64>,
    layout: &GridLayout,
    phase_scale: f64,
    out: &mut [f64],
) -> Result<(), OpticsError> {
    if sample.len() != layout.blocks.len() {
        return Err(OpticsError::LengthMismatch {
            expected: layout.blocks.len(),
            found: sample.len(),
        });
    }
    out.fill(layout.pad_phase);
    let side = layout.side;
    for (b, &x) in layout.blocks.iter().zip(sample.iter()) {
        let phase = x * phase_scale;
        for r in b.row..b.row + b.height {
            out[r * side + b.col..r * side + b.col + b.width].fill(phase);
        }
    }
    Ok(())
}

/// Parameters of the fixed embedding grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EmbeddingKind {
    /// Uniform values in `[0, amplitude]`, constant on
    /// `correlation_length`-sided square blocks.
    Noise {
        amplitude: f64,
        correlation_length: usize,
        seed: u64,
    },
    /// Real part of a multi-frequency carrier traversed row-major, rescaled to
    /// `[0, pi]`. Carrier phases are drawn from `seed` unless given.
    Fourier {
        frequencies: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phases: Option<Vec<f64>>,
        seed: u64,
    },
    Constant {
        value: f64,
    },
    /// Row-major grid loaded from a file (see [`load_grid_file`]).
    Custom {
        path: std::path::PathBuf,
    },
}

/// Fixed phase grid superimposed on every input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub kind: EmbeddingKind,
    pub values: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn side(&self) -> usize {
        self.values.nrows()
    }

    /// Wrap an explicit grid; every value must lie in `[0, pi]`.
    pub fn from_grid(kind: EmbeddingKind, values: Array2<f64>) -> Result<Self, OpticsError> {
        if values.nrows() != values.ncols() {
            return Err(OpticsError::CustomGrid("grid is not square".into()));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=PI).contains(*v)) {
            return Err(OpticsError::EmbeddingRange(bad));
        }
        Ok(EmbeddingMatrix { kind, values })
    }
}

/// Build the embedding grid for a `side x side` modulator.
pub fn build_embedding(kind: &EmbeddingKind, side: usize) -> Result<EmbeddingMatrix, OpticsError> {
    let values = match kind {
        EmbeddingKind::Noise {
            amplitude,
            correlation_length,
            seed,
        } => noise_grid(*amplitude, *correlation_length, side, *seed)?,
        EmbeddingKind::Fourier {
            frequencies,
            phases,
            seed,
        } => {
            if *frequencies == 0 {
                return Err(OpticsError::NoFrequencies);
            }
            let phases = match phases {
                Some(p) if p.len() != *frequencies => {
                    return Err(OpticsError::PhaseCount {
                        expected: *frequencies,
                        found: p.len(),
                    })
                }
                Some(p) => p.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    (0..*frequencies).map(|_| rng.random_range(0.0..TAU)).collect()
                }
            };
            fourier_grid(&phases, side)
        }
        EmbeddingKind::Constant { value } => {
            if !(0.0..=PI).contains(value) {
                return Err(OpticsError::EmbeddingRange(*value));
            }
            Array2::from_elem((side, side), *value)
        }
        EmbeddingKind::Custom { path } => {
            let grid = load_grid_file(path)?;
            if grid.nrows() != side {
                return Err(OpticsError::GridMismatch {
                    expected: side,
                    found: grid.nrows(),
                });
            }
            grid
        }
    };
    EmbeddingMatrix::from_grid(kind.clone(), values)
}

fn noise_grid(amplitude: f64, length: usize, side: usize, seed: u64) -> Result<Array2<f64>, OpticsError> {
    if !(0.0..=PI).contains(&amplitude) {
        return Err(OpticsError::Amplitude(amplitude));
    }
    if length < 1 || length > side {
        return Err(OpticsError::CorrelationLength { length, side });
    }
    let per_side = side.div_ceil(length);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..per_side * per_side)
        .map(|_| amplitude * rng.random::<f64>())
        .collect();
    Ok(Array2::from_shape_fn((side, side), |(r, c)| {
        draws[(r / length) * per_side + c / length]
    }))
}

/// `Re sum_w (1/n) exp(i (w k / n + phase_w))` over the row-major index `k`,
/// affinely rescaled so its minimum is 0 and its maximum is pi.
fn fourier_grid(phases: &[f64], side: usize) -> Array2<f64> {
    let n = phases.len() as f64;
    let raw: Vec<f64> = (0..side * side)
        .map(|k| {
            phases
                .iter()
                .enumerate()
                .map(|(w, ph)| ((w + 1) as f64 * k as f64 / n + ph).cos() / n)
                .sum()
        })
        .collect();
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    Array2::from_shape_fn((side, side), |(r, c)| {
        if span > 0.0 {
            ((raw[r * side + c] - lo) / span * PI).clamp(0.0, PI)
        } else {
            0.0
        }
    })
}

/// Read a square grid of reals in row-major order.
///
/// Files ending in `.bin` hold little-endian `f64` values; anything else is
/// text with values separated by whitespace or commas (`#` starts a comment).
pub fn load_grid_file(path: &Path) -> Result<Array2<f64>, OpticsError> {
    let err = |m: String| OpticsError::CustomGrid(format!("{}: {m}", path.display()));
    let values: Vec<f64> = if path.extension().is_some_and(|e| e == "bin") {
        let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        if bytes.len() % 8 != 0 {
            return Err(err("length is not a multiple of 8".into()));
        }
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        text.lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ','))
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad value '{t}'"))))
            .collect::<Result<_, _>>()?
    };
    let side = (values.len() as f64).sqrt().round() as usize;
    if side == 0 || side * side != values.len() {
        return Err(err(format!("{} values do not form a square", values.len())));
    }
    Ok(Array2::from_shape_vec((side, side), values).unwrap())
}

/// Write a grid in the text format read by [`load_grid_file`].
pub fn save_grid_text(path: &Path, grid: &Array2<f64>) -> std::io::Result<()> {
    let mut out = String::new();
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "LevelsRepr", into = "LevelsRepr")]
pub enum PhaseLevels {
    #[default]
    Continuous,
    /// Equally spaced levels over `[0, 2 pi)`.
    Discrete(u32),
}

impl TryFrom<LevelsRepr> for PhaseLevels {
    type Error = String;

    fn try_from(r: LevelsRepr) -> Result<Self, Self::Error> {
        Ok(match r.into_levels()? {
            Some(n) => PhaseLevels::Discrete(n),
            None => PhaseLevels::Continuous,
        })
    }
}

impl From<PhaseLevels> for LevelsRepr {
    fn from(l: PhaseLevels) -> Self {
        LevelsRepr::from_levels(match l {
            PhaseLevels::Continuous => None,
            PhaseLevels::Discrete(n) => Some(n),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub phase_scale: f64,
    pub phase_levels: PhaseLevels,
    pub layout: GridLayout,
}

impl EncoderConfig {
    pub fn new(layout: GridLayout) -> EncoderConfig {
        EncoderConfig {
            phase_scale: PI,
            phase_levels: PhaseLevels::Continuous,
            layout,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.phase_scale > 0.0 && self.phase_scale <= TAU) {
            return Err(OpticsError::Encoder(format!(
                "phase scale {} outside (0, 2 pi]",
                self.phase_scale
            )));
        }
        if let PhaseLevels::Discrete(n) = self.phase_levels {
            if n < 2 {
                return Err(OpticsError::Encoder(format!("{n} phase levels")));
            }
        }
        self.layout.validate()
    }

    pub fn side(&self) -> usize {
        self.layout.side
    }
}

/// Snap `phase` to the nearest of `levels` equally spaced values in `[0, 2 pi)`.
pub fn quantize_phase(phase: f64, levels: u32) -> f64 {
    let step = TAU / f64::from(levels);
    let q = (phase / step).round().rem_euclid(f64::from(levels));
    q * step
}

/// Square grid of complex amplitudes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub side: usize,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(side: usize) -> ComplexField {
        ComplexField {
            side,
            values: vec![Complex64::new(0.0, 0.0); side * side],
        }
    }

    pub fn from_values(side: usize, values: Vec<Complex64>) -> ComplexField {
        assert_eq!(values.len(), side * side, "field must be square");
        ComplexField { side, values }
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.side + col]
    }
}

/// Modulator output `exp(i (layout(sample) + W))`.
pub fn encode(
    sample: ArrayView1<'_, f64>,
    embedding: &EmbeddingMatrix,
    config: &EncoderConfig,
) -> Result<ComplexField, OpticsError> {
    let mut phases = vec![0.0; config.side() * config.side()];
    let mut field = ComplexField::zeros(config.side());
    encode_into(sample, embedding, config, &mut phases, &mut field.values)?;
    Ok(field)
}

/// [`encode`] into caller-provided buffers of length `side^2`.
pub(crate) fn encode_into(
    sample: ArrayView1<'_, f64>,
    embedding: &EmbeddingMatrix,
    config: &EncoderConfig,
    phases: &mut [f64],
    out: &mut [Complex64],
) -> Result<(), OpticsError> {
    if embedding.side() != config.side() {
        return Err(OpticsError::GridMismatch {
            expected: config.side(),
            found: embedding.side(),
        });
    }
    layout_into(sample, &config.layout, config.phase_scale, phases)?;
    let w = embedding
        .values
        .as_slice()
        .expect("embedding grids are standard layout");
    for ((o, &p), &wv) in out.iter_mut().zip(phases.iter()).zip(w) {
        let mut phi = p + wv;
        if let PhaseLevels::Discrete(n) = config.phase_levels {
            phi = quantize_phase(phi, n);
        }
        *o = Complex64::from_polar(1.0, phi);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};

    #[test]
    fn zero_amplitude_noise_is_zero() {
        let kind = EmbeddingKind::Noise {
            amplitude: 0.0,
            correlation_length: 2,
            seed: 5,
        };
        let w = build_embedding(&kind, 8).unwrap();
        assert!(w.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_block_noise_is_constant() {
        let kind = EmbeddingKind::Noise {
            amplitude: 2.0,
            correlation_length: 8,
            seed: 5,
        };
        let w = build_embedding(&kind, 8).unwrap();
        let first = w.values[[0, 0]];
        assert!(w.values.iter().all(|&v| v == first));
        assert!((0.0..=2.0).contains(&first));
    }

    #[test]
    fn noise_is_piecewise_constant_with_partial_edges() {
        let kind = EmbeddingKind::Noise {
            amplitude: 3.0,
            correlation_length: 3,
            seed: 11,
        };
        let w = build_embedding(&kind, 8).unwrap().values;
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(w[[r, c]], w[[r / 3 * 3, c / 3 * 3]]);
            }
        }
        // Edge blocks (rows 6..8) are distinct draws from the interior.
        assert_ne!(w[[6, 0]], w[[3, 0]]);
    }

    #[test]
    fn embedding_parameter_errors() {
        let noise = |a, l| EmbeddingKind::Noise {
            amplitude: a,
            correlation_length: l,
            seed: 0,
        };
        assert_eq!(
            build_embedding(&noise(4.0, 1), 8).unwrap_err(),
            OpticsError::Amplitude(4.0)
        );
        assert!(matches!(
            build_embedding(&noise(1.0, 0), 8),
            Err(OpticsError::CorrelationLength { .. })
        ));
        assert!(matches!(
            build_embedding(&noise(1.0, 9), 8),
            Err(OpticsError::CorrelationLength { .. })
        ));
        let fourier = EmbeddingKind::Fourier {
            frequencies: 0,
            phases: None,
            seed: 0,
        };
        assert_eq!(build_embedding(&fourier, 8).unwrap_err(), OpticsError::NoFrequencies);
    }

    #[test]
    fn single_frequency_carrier_matches_closed_form() {
        // Oracle: evaluate cos(k) directly, then rescale min -> 0, max -> pi.
        let raw: Vec<f64> = (0..16).map(|k| (k as f64).cos()).collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected: Vec<f64> = raw.iter().map(|v| (v - lo) / (hi - lo) * PI).collect();

        let kind = EmbeddingKind::Fourier {
            frequencies: 1,
            phases: Some(vec![0.0]),
            seed: 0,
        };
        let w = build_embedding(&kind, 4).unwrap();
        for (got, want) in w.values.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // Extremes of cos over k = 0..15 sit at k = 0 (max) and k = 3 (min).
        assert!((w.values[[0, 0]] - PI).abs() < 1e-12);
        assert!(w.values[[0, 3]].abs() < 1e-12);
    }

    #[test]
    fn layout_scales_blocks() {
        let blocks = (0..4)
            .map(|a| Block {
                row: (a / 2) * 2,
                col: (a % 2) * 2,
                height: 2,
                width: 2,
            })
            .collect();
        let layout = GridLayout::new(4, blocks, 0.0).unwrap();
        let grid = layout_sample(arr1(&[0.0, 1.0, 0.5, 1.0]).view(), &layout, PI).unwrap();
        assert_eq!(grid[[0, 0]], 0.0);
        assert_eq!(grid[[1, 3]], PI);
        assert_eq!(grid[[3, 0]], PI / 2.0);
        assert_eq!(grid[[2, 2]], PI);
        let zero = layout_sample(Array1::zeros(4).view(), &layout, PI).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(matches!(
            layout_sample(Array1::zeros(3).view(), &layout, PI),
            Err(OpticsError::LengthMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn mnist_replication_layout() {
        let layout = GridLayout::replicated(28, 28, 2).unwrap();
        assert_eq!(layout.side, 56);
        let sample = Array1::from_shape_fn(784, |i| (i % 255) as f64 / 255.0);
        let grid = layout_sample(sample.view(), &layout, 1.0).unwrap();
        for p in 0..784 {
            let (r, c) = (p / 28 * 2, p % 28 * 2);
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                assert_eq!(grid[[r + dr, c + dc]], sample[p]);
            }
        }
    }

    #[test]
    fn tiled_layout_is_equal_area() {
        let l = GridLayout::tiled(22, 64).unwrap();
        assert_eq!(l.attributes(), 22);
        assert!(l.blocks.iter().all(|b| b.height == 12 && b.width == 12));
        let l = GridLayout::tiled(8, 64).unwrap();
        assert!(l.blocks.iter().all(|b| b.height == 21 && b.width == 21));
        assert!(GridLayout::tiled(100, 5).is_err());
    }

    #[test]
    fn overlapping_blocks_rejected() {
        let b = |row, col| Block {
            row,
            col,
            height: 2,
            width: 2,
        };
        assert!(GridLayout::new(4, vec![b(0, 0), b(1, 1)], 0.0).is_err());
        assert!(GridLayout::new(4, vec![b(0, 0), b(3, 3)], 0.0).is_err());
        assert!(GridLayout::new(4, vec![b(0, 0), b(2, 2)], 0.0).is_ok());
    }

    #[test]
    fn encode_trivial_fields() {
        let layout = GridLayout::tiled(4, 4).unwrap();
        let cfg = EncoderConfig::new(layout);
        let zero_w = build_embedding(&EmbeddingKind::Constant { value: 0.0 }, 4).unwrap();
        let f = encode(Array1::zeros(4).view(), &zero_w, &cfg).unwrap();
        assert!(f.values.iter().all(|z| *z == Complex64::new(1.0, 0.0)));

        let f = encode(arr1(&[1.0, 0.0, 0.0, 0.0]).view(), &zero_w, &cfg).unwrap();
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let z = f.get(r, c);
            assert!((z - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        }

        let w8 = build_embedding(&EmbeddingKind::Constant { value: 0.0 }, 8).unwrap();
        assert!(matches!(
            encode(Array1::zeros(4).view(), &w8, &cfg),
            Err(OpticsError::GridMismatch { .. })
        ));
    }

    #[test]
    fn quantization_snaps_to_nearest_level() {
        let step = TAU / 210.0;
        assert!((quantize_phase(0.02, 210) - step).abs() < 1e-15);
        assert!((step - 0.029_919_930_034_188_5).abs() < 1e-15);
        assert_eq!(quantize_phase(0.0, 210), 0.0);
        assert!(quantize_phase(TAU - 1e-9, 210).abs() < 1e-12);
    }

    #[test]
    fn encoder_config_validation() {
        let layout = GridLayout::tiled(4, 4).unwrap();
        let mut cfg = EncoderConfig::new(layout);
        cfg.phase_scale = 7.0;
        assert!(cfg.validate().is_err());
        cfg.phase_scale = PI;
        cfg.phase_levels = PhaseLevels::Discrete(1);
        assert!(cfg.validate().is_err());
        cfg.phase_levels = PhaseLevels::Discrete(210);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn grid_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let g = Array2::from_shape_fn((3, 3), |(r, c)| (r * 3 + c) as f64 * 0.3);
        let txt = dir.path().join("w.txt");
        save_grid_text(&txt, &g).unwrap();
        assert_eq!(load_grid_file(&txt).unwrap(), g);

        let bin = dir.path().join("w.bin");
        let bytes: Vec<u8> = g.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, bytes).unwrap();
        assert_eq!(load_grid_file(&bin).unwrap(), g);

        let kind = EmbeddingKind::Custom { path: txt.clone() };
        assert_eq!(build_embedding(&kind, 3).unwrap().values, g);
        assert!(matches!(
            build_embedding(&kind, 4),
            Err(OpticsError::GridMismatch { .. })
        ));

        std::fs::write(&txt, "0 1\n2 9\n").unwrap();
        assert_eq!(
            build_embedding(&EmbeddingKind::Custom { path: txt }, 2).unwrap_err(),
            OpticsError::EmbeddingRange(9.0)
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn kind_strategy() -> impl Strategy<Value = EmbeddingKind> {
            prop_oneof![
                (0.0..=PI, 1usize..16, any::<u64>()).prop_map(|(a, l, s)| EmbeddingKind::Noise {
                    amplitude: a,
                    correlation_length: l,
                    seed: s
                }),
                (1usize..40, any::<u64>()).prop_map(|(n, s)| EmbeddingKind::Fourier {
                    frequencies: n,
                    phases: None,
                    seed: s
                }),
                (0.0..=PI).prop_map(|v| EmbeddingKind::Constant { value: v }),
            ]
        }

        proptest! {
            #[test]
            fn embedding_in_range_and_reproducible(kind in kind_strategy()) {
                let a = build_embedding(&kind, 16).unwrap();
                prop_assert!(a.values.iter().all(|v| (0.0..=PI).contains(v)));
                let b = build_embedding(&kind, 16).unwrap();
                let bits = |m: &EmbeddingMatrix| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a), bits(&b));
            }

            #[test]
            fn unit_modulus(sample in proptest::collection::vec(0.0f64..=1.0, 4),
                            w in 0.0..=PI, levels in prop_oneof![Just(PhaseLevels::Continuous), (2u32..300).prop_map(PhaseLevels::Discrete)]) {
                let mut cfg = EncoderConfig::new(GridLayout::tiled(4, 8).unwrap());
                cfg.phase_levels = levels;
                let emb = build_embedding(&EmbeddingKind::Constant { value: w }, 8).unwrap();
                let f = encode(Array1::from(sample).view(), &emb, &cfg).unwrap();
                for z in &f.values {
                    prop_assert!((z.norm() - 1.0).abs() <= 1e-12);
                }
            }

            #[test]
            fn quantization_error_bound(phi in 0.0..TAU, levels in 2u32..1000) {
                let q = quantize_phase(phi, levels);
                let d = (q - phi).rem_euclid(TAU);
                let err = d.min(TAU - d);
                prop_assert!(err <= PI / f64::from(levels) + 1e-12);
                prop_assert!((0.0..TAU).contains(&q));
            }
        }
    }
}
