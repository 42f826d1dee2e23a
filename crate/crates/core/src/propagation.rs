//! Linear transfer operators applied to the modulator field.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::encoder::ComplexField;
use crate::error::OpticsError;

/// Serializable description of a transfer operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OperatorSpec {
    /// Far field of a lens: centered unitary 2-D DFT, optionally on a grid
    /// zero-padded by an integer factor.
    Dft2 {
        #[serde(default = "one")]
        padding: usize,
    },
    /// Complex Gaussian matrix mapping the `P^2` input cells onto an
    /// `out_side x out_side` detector.
    Gaussian { out_side: usize, seed: u64 },
}

fn one() -> usize {
    1
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec::Dft2 { padding: 1 }
    }
}

/// Planned transfer operator for a fixed input grid side.
#[derive(Clone)]
pub enum TransferOperator {
    Dft2(Dft2),
    Gaussian(GaussianOperator),
}

impl fmt::Debug for TransferOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferOperator::Dft2(d) => f
                .debug_struct("Dft2")
                .field("in_side", &d.in_side)
                .field("padding", &d.padding)
                .finish(),
            TransferOperator::Gaussian(g) => f
                .debug_struct("Gaussian")
                .field("in_side", &g.in_side)
                .field("out_side", &g.out_side)
                .finish(),
        }
    }
}

impl TransferOperator {
    pub fn build(spec: &OperatorSpec, in_side: usize) -> Result<TransferOperator, OpticsError> {
        match *spec {
            OperatorSpec::Dft2 { padding } => Ok(TransferOperator::Dft2(Dft2::new(in_side, padding)?)),
            OperatorSpec::Gaussian { out_side, seed } => Ok(TransferOperator::Gaussian(GaussianOperator::new(
                in_side, out_side, seed,
            )?)),
        }
    }

    pub fn in_side(&self) -> usize {
        match self {
            TransferOperator::Dft2(d) => d.in_side,
            TransferOperator::Gaussian(g) => g.in_side,
        }
    }

    /// Side of the output (detector-plane) grid.
    pub fn out_side(&self) -> usize {
        match self {
            TransferOperator::Dft2(d) => d.out_side(),
            TransferOperator::Gaussian(g) => g.out_side,
        }
    }

    pub fn propagate(&self, field: &ComplexField) -> Result<ComplexField, OpticsError> {
        if field.side != self.in_side() {
            return Err(OpticsError::GridMismatch {
                expected: self.in_side(),
                found: field.side,
            });
        }
        let mut out = ComplexField::zeros(self.out_side());
        let mut scratch = Vec::new();
        self.propagate_into(&field.values, &mut out.values, &mut scratch);
        Ok(out)
    }

    /// Propagate `input` (`in_side^2` values) into `out` (`out_side^2`
    /// values). `scratch` is resized as needed and may be reused across calls.
    pub(crate) fn propagate_into(&self, input: &[Complex64], out: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        match self {
            TransferOperator::Dft2(d) => d.forward_into(input, out, scratch),
            TransferOperator::Gaussian(g) => g.apply_into(input, out),
        }
    }
}

/// Sum of squared moduli.
pub fn energy(field: &ComplexField) -> f64 {
    field.values.iter().map(|z| z.norm_sqr()).sum()
}

/// Centered, unitary 2-D DFT: `F(u, v) = (1/Q) sum f(x, y) exp(-2 pi i (ux + vy)/Q)`
/// with zero frequency moved to index `Q/2` on both axes (`Q = padding * P`).
#[derive(Clone)]
pub struct Dft2 {
    pub in_side: usize,
    pub padding: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Dft2 {
    pub fn new(in_side: usize, padding: usize) -> Result<Dft2, OpticsError> {
        if in_side == 0 || padding == 0 {
            return Err(OpticsError::Layout(
                "dft2 needs a non-empty grid and padding >= 1".into(),
            ));
        }
        let q = in_side * padding;
        let mut planner = FftPlanner::new();
        Ok(Dft2 {
            in_side,
            padding,
            forward: planner.plan_fft_forward(q),
            inverse: planner.plan_fft_inverse(q),
        })
    }

    pub fn out_side(&self) -> usize {
        self.in_side * self.padding
    }

    fn forward_into(&self, input: &[Complex64], out: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let q = self.out_side();
        let p = self.in_side;
        let need = self.forward.get_inplace_scratch_len();
        if scratch.len() < q * q + need {
            scratch.resize(q * q + need, Complex64::new(0.0, 0.0));
        }
        let (work, fft_scratch) = scratch.split_at_mut(q * q);
        work.fill(Complex64::new(0.0, 0.0));
        for r in 0..p {
            work[r * q..r * q + p].copy_from_slice(&input[r * p..(r + 1) * p]);
        }
        transform_2d(&*self.forward, q, work, &mut fft_scratch[..need]);
        let norm = 1.0 / q as f64;
        let h = q / 2;
        for r in 0..q {
            let dst = ((r + h) % q) * q;
            for c in 0..q {
                out[dst + (c + h) % q] = work[r * q + c] * norm;
            }
        }
    }

    /// Inverse of [`Dft2::forward`] on the full `Q x Q` output grid.
    pub fn inverse(&self, field: &ComplexField) -> Result<ComplexField, OpticsError> {
        let q = self.out_side();
        if field.side != q {
            return Err(OpticsError::GridMismatch {
                expected: q,
                found: field.side,
            });
        }
        let h = q / 2;
        let mut work = vec![Complex64::new(0.0, 0.0); q * q];
        for r in 0..q {
            for c in 0..q {
                work[r * q + c] = field.values[((r + h) % q) * q + (c + h) % q];
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        transform_2d(&*self.inverse, q, &mut work, &mut scratch);
        let norm = 1.0 / q as f64;
        work.iter_mut().for_each(|z| *z *= norm);
        Ok(ComplexField::from_values(q, work))
    }

    pub fn forward(&self, field: &ComplexField) -> Result<ComplexField, OpticsError> {
        TransferOperator::Dft2(self.clone()).propagate(field)
    }
}

/// Unnormalized 2-D transform of a `q x q` row-major buffer: 1-D transforms
/// along rows, transpose, rows again, transpose back.
fn transform_2d(fft: &dyn Fft<f64>, q: usize, data: &mut [Complex64], scratch: &mut [Complex64]) {
    fft.process_with_scratch(data, scratch);
    transpose_square(data, q);
    fft.process_with_scratch(data, scratch);
    transpose_square(data, q);
}

fn transpose_square(data: &mut [Complex64], q: usize) {
    for r in 0..q {
        for c in r + 1..q {
            data.swap(r * q + c, c * q + r);
        }
    }
}

/// Fixed complex Gaussian matrix with i.i.d. entries `CN(0, 1) / P`.
#[derive(Debug, Clone)]
pub struct GaussianOperator {
    pub in_side: usize,
    pub out_side: usize,
    pub seed: u64,
    /// `out_side^2 x in_side^2`.
    pub matrix: Array2<Complex64>,
}

impl GaussianOperator {
    pub fn new(in_side: usize, out_side: usize, seed: u64) -> Result<Self, OpticsError> {
        if in_side == 0 || out_side == 0 {
            return Err(OpticsError::Layout("gaussian operator needs non-empty grids".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_side as f64 * std::f64::consts::SQRT_2);
        let (d, n) = (out_side * out_side, in_side * in_side);
        let matrix = Array2::from_shape_simple_fn((d, n), || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * scale, im * scale)
        });
        Ok(GaussianOperator {
            in_side,
            out_side,
            seed,
            matrix,
        })
    }

    fn apply_into(&self, input: &[Complex64], out: &mut [Complex64]) {
        for (o, row) in out.iter_mut().zip(self.matrix.rows()) {
            *o = row.iter().zip(input).map(|(a, x)| a * x).sum();
        }
    }
}
