//! Linear readout trained by ridge regression on the detected features.
//!
//! The `M x M` normal equations `(H^T H + lambda I) beta = H^T T` are
//! accumulated from row blocks and solved by Cholesky with one step of
//! iterative refinement; a symmetric eigendecomposition takes over when the
//! factorization breaks down.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{Targets, Task};
use crate::error::ReadoutError;
use crate::parallel::Execution;

/// Columns per Gram block.
const GRAM_BLOCK: usize = 256;

/// Default regularization grid searched on a held-out slice of the training
/// rows.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-6, 1e-4, 1e-2, 1.0, 1e2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetEncoding {
    /// `K` columns: `+1` for the true class, `-1` elsewhere.
    OneHotPm1,
    /// One column of `+1` (class 1) / `-1` (class 0).
    SignBinary,
    /// One column of real values.
    Scalar,
}

impl TargetEncoding {
    pub fn for_task(task: Task) -> TargetEncoding {
        match task {
            Task::Multiclass { .. } => TargetEncoding::OneHotPm1,
            Task::Binary => TargetEncoding::SignBinary,
            Task::Regression => TargetEncoding::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub values: Array2<f64>,
    pub encoding: TargetEncoding,
}

impl TargetMatrix {
    pub fn encode(targets: &Targets, task: Task) -> Result<TargetMatrix, ReadoutError> {
        let encoding = TargetEncoding::for_task(task);
        let values = match (targets, task) {
            (Targets::Classes(c), Task::Multiclass { classes }) => {
                let mut t = Array2::from_elem((c.len(), classes), -1.0);
                for (i, &k) in c.iter().enumerate() {
                    if k >= classes {
                        return Err(ReadoutError::Dimension(format!("class {k} of {classes}")));
                    }
                    t[[i, k]] = 1.0;
                }
                t
            }
            (Targets::Classes(c), Task::Binary) => {
                Array2::from_shape_fn((c.len(), 1), |(i, _)| if c[i] == 1 { 1.0 } else { -1.0 })
            }
            (Targets::Values(v), Task::Regression) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(ReadoutError::NonFinite("targets"));
                }
                Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i])
            }
            _ => return Err(ReadoutError::Dimension("targets do not match task".into())),
        };
        Ok(TargetMatrix { values, encoding })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
}

/// Trained readout weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// `M x K`.
    pub beta: Array2<f64>,
    pub lambda: f64,
    pub encoding: TargetEncoding,
    pub pipeline_hash: String,
}

/// Running sums `H^T H`, `H^T T` over the rows seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gram: Array2<f64>,
    pub rhs: Array2<f64>,
    pub rows: usize,
}

impl NormalEquations {
    pub fn zeros(m: usize, k: usize) -> NormalEquations {
        NormalEquations {
            gram: Array2::zeros((m, m)),
            rhs: Array2::zeros((m, k)),
            rows: 0,
        }
    }

    pub fn from_rows(h: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>, exec: Execution) -> Result<Self, ReadoutError> {
        let mut eq = NormalEquations::zeros(h.ncols(), t.ncols());
        eq.add_rows(h, t, exec)?;
        Ok(eq)
    }

    /// Add the contribution of a block of rows.
    pub fn add_rows(
        &mut self,
        h: ArrayView2<'_, f64>,
        t: ArrayView2<'_, f64>,
        exec: Execution,
    ) -> Result<(), ReadoutError> {
        let m = self.gram.nrows();
        if h.ncols() != m || t.ncols() != self.rhs.ncols() || h.nrows() != t.nrows() {
            return Err(ReadoutError::Dimension(format!(
                "features {}x{} and targets {}x{} for a {}-channel, {}-output system",
                h.nrows(),
                h.ncols(),
                t.nrows(),
                t.ncols(),
                m,
                self.rhs.ncols()
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(ReadoutError::NonFinite("features"));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(ReadoutError::NonFinite("targets"));
        }
        self.gram += &gram(h, exec);
        self.rhs += &h.t().dot(&t);
        self.rows += h.nrows();
        Ok(())
    }

    pub fn merged(&self, other: &NormalEquations) -> NormalEquations {
        NormalEquations {
            gram: &self.gram + &other.gram,
            rhs: &self.rhs + &other.rhs,
            rows: self.rows + other.rows,
        }
    }

    /// Solve `(H^T H + lambda I) beta = H^T T`.
    pub fn solve(&self, lambda: f64, exec: Execution) -> Result<Array2<f64>, ReadoutError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ReadoutError::NegativeLambda(lambda));
        }
        if self.rows == 0 {
            return Err(ReadoutError::Empty);
        }
        let mut a = self.gram.clone();
        a.diag_mut().mapv_inplace(|d| d + lambda);
        solve_spd(&a, &self.rhs, lambda, exec)
    }
}

/// `H^T H`, computed blockwise on the upper triangle and mirrored.
pub fn gram(h: ArrayView2<'_, f64>, exec: Execution) -> Array2<f64> {
    let m = h.ncols();
    let starts: Vec<usize> = (0..m).step_by(GRAM_BLOCK).collect();
    let pairs: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| starts[i..].iter().map(move |&b| (a, b)))
        .collect();
    let blocks = crate::parallel::map_ordered(exec, &pairs, |&(a, b)| {
        let ha = h.slice(s![.., a..(a + GRAM_BLOCK).min(m)]);
        let hb = h.slice(s![.., b..(b + GRAM_BLOCK).min(m)]);
        ha.t().dot(&hb)
    });
    let mut g = Array2::zeros((m, m));
    for (&(a, b), blk) in pairs.iter().zip(blocks) {
        let (ra, rb) = (a..a + blk.nrows(), b..b + blk.ncols());
        g.slice_mut(s![ra.clone(), rb.clone()]).assign(&blk);
        if a != b {
            g.slice_mut(s![rb, ra]).assign(&blk.t());
        }
    }
    g
}

/// Lower Cholesky factor of a symmetric matrix, or `None` when a pivot is
/// not safely positive.
fn cholesky(a: &Array2<f64>, exec: Execution) -> Option<Array2<f64>> {
    let n = a.nrows();
    let max_diag = a.diag().iter().copied().fold(0.0, f64::max);
    let tol = f64::EPSILON * n as f64 * max_diag;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let (mut head, mut rest) = l.view_mut().split_at(Axis(0), j + 1);
        let mut row_j = head.row_mut(j);
        let lj = row_j.as_slice_mut().unwrap();
        let d = a[[j, j]] - dot(&lj[..j], &lj[..j]);
        if !(d > tol && d.is_finite()) {
            return None;
        }
        let piv = d.sqrt();
        lj[j] = piv;
        let lj = &lj[..j];
        let a_col = a.column(j);
        let update = |i: usize, mut li: ndarray::ArrayViewMut1<'_, f64>| {
            let li = li.as_slice_mut().unwrap();
            li[j] = (a_col[j + 1 + i] - dot(&li[..j], lj)) / piv;
        };
        let rows = rest.outer_iter_mut();
        #[cfg(feature = "parallel")]
        if exec.is_parallel() && (n - j) * j > 1 << 14 {
            use rayon::prelude::*;
            rows.into_par_iter().enumerate().for_each(|(i, li)| update(i, li));
            continue;
        }
        let _ = exec;
        rows.enumerate().for_each(|(i, li)| update(i, li));
    }
    Some(l)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators keep the loop vectorizable while fixing
    // the summation order.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Solve `L L^T x = b` for every column of `b`.
fn cholesky_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        let mut y = col.to_vec();
        for i in 0..n {
            let li = l.row(i);
            let li = &li.as_slice().unwrap()[..i];
            y[i] = (y[i] - dot(li, &y[..i])) / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        col.assign(&Array1::from(y));
    }
    x
}

fn solve_spd(a: &Array2<f64>, b: &Array2<f64>, lambda: f64, exec: Execution) -> Result<Array2<f64>, ReadoutError> {
    if let Some(l) = cholesky(a, exec) {
        let mut x = cholesky_solve(&l, b);
        let r = b - &a.dot(&x);
        x += &cholesky_solve(&l, &r);
        return Ok(x);
    }
    eigen_solve(a, b, lambda)
}

/// Spectral solve for systems the Cholesky factorization rejects. Without
/// regularization a (numerically) singular system is an error; with it,
/// directions below the noise floor are dropped.
fn eigen_solve(a: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> Result<Array2<f64>, ReadoutError> {
    let n = a.nrows();
    let am = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(am);
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = f64::EPSILON * n as f64 * max_ev;
    if lambda == 0.0 && eig.eigenvalues.iter().any(|&w| w <= tol) {
        return Err(ReadoutError::Singular);
    }
    let bm = nalgebra::DMatrix::from_fn(n, b.ncols(), |i, j| b[[i, j]]);
    let proj = eig.eigenvectors.transpose() * bm;
    let scaled = nalgebra::DMatrix::from_fn(n, b.ncols(), |i, j| {
        let w = eig.eigenvalues[i];
        if w > tol {
            proj[(i, j)] / w
        } else {
            0.0
        }
    });
    let x = &eig.eigenvectors * scaled;
    Ok(Array2::from_shape_fn((n, b.ncols()), |(i, j)| x[(i, j)]))
}

/// Fit `beta` on all rows of `h` and `t` with regularization `lambda`.
pub fn train_ridge(
    h: ArrayView2<'_, f64>,
    t: &TargetMatrix,
    lambda: f64,
    pipeline_hash: &str,
    exec: Execution,
) -> Result<ReadoutModel, ReadoutError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ReadoutError::NegativeLambda(lambda));
    }
    if h.nrows() == 0 {
        return Err(ReadoutError::Empty);
    }
    let eq = NormalEquations::from_rows(h, t.values.view(), exec)?;
    Ok(ReadoutModel {
        beta: eq.solve(lambda, exec)?,
        lambda,
        encoding: t.encoding,
        pipeline_hash: pipeline_hash.to_string(),
    })
}

/// `Y = H beta`.
pub fn predict(h: ArrayView2<'_, f64>, model: &ReadoutModel) -> Result<Array2<f64>, ReadoutError> {
    if h.ncols() != model.beta.nrows() {
        return Err(ReadoutError::Dimension(format!(
            "{} feature columns for a {}-channel model",
            h.ncols(),
            model.beta.nrows()
        )));
    }
    Ok(h.dot(&model.beta))
}

/// Decided labels: class indices for multiclass (ties to the lowest index),
/// `1`/`0` for binary (sign, with zero counted positive).
pub fn decide(y: ArrayView2<'_, f64>, encoding: TargetEncoding) -> Vec<usize> {
    match encoding {
        TargetEncoding::OneHotPm1 => y
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect(),
        TargetEncoding::SignBinary => y.column(0).iter().map(|&v| usize::from(v >= 0.0)).collect(),
        TargetEncoding::Scalar => Vec::new(),
    }
}

/// Signed label of a binary decision.
pub fn sign_label(class: usize) -> i8 {
    if class == 1 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// `confusion[true][predicted]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u64>>>,
    /// Root mean square over samples of the output error norm.
    pub rmsd: f64,
    /// `rmsd / (max T - min T)` for regression.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nrmsd: Option<f64>,
}

impl Metrics {
    pub fn error_rate(&self) -> Option<f64> {
        self.accuracy.map(|a| 1.0 - a)
    }
}

/// Score readout outputs `y` against the true targets.
pub fn evaluate(y: ArrayView2<'_, f64>, targets: &Targets, task: Task) -> Result<Metrics, ReadoutError> {
    let t = TargetMatrix::encode(targets, task)?;
    if y.dim() != t.values.dim() {
        return Err(ReadoutError::Dimension(format!(
            "outputs {:?} vs targets {:?}",
            y.dim(),
            t.values.dim()
        )));
    }
    let n = y.nrows();
    if n == 0 {
        return Err(ReadoutError::Empty);
    }
    let sq: f64 = y.iter().zip(t.values.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let rmsd = (sq / n as f64).sqrt();
    match (targets, task.classes()) {
        (Targets::Classes(c), Some(k)) => {
            let predicted = decide(y, t.encoding);
            let mut confusion = vec![vec![0u64; k]; k];
            for (&truth, &p) in c.iter().zip(&predicted) {
                confusion[truth][p] += 1;
            }
            let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
            Ok(Metrics {
                samples: n,
                accuracy: Some(correct as f64 / n as f64),
                confusion: Some(confusion),
                rmsd,
                nrmsd: None,
            })
        }
        (Targets::Values(v), None) => {
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
            if hi <= lo {
                return Err(ReadoutError::DegenerateRange);
            }
            Ok(Metrics {
                samples: n,
                accuracy: None,
                confusion: None,
                rmsd,
                nrmsd: Some(rmsd / (hi - lo)),
            })
        }
        _ => Err(ReadoutError::Dimension("targets do not match task".into())),
    }
}

/// Held-out score of one candidate regularization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Error rate for classification, RMSD for regression; `None` when the
    /// solve failed.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaFit {
    pub model: ReadoutModel,
    pub scores: Vec<LambdaScore>,
}

/// Pick `lambda` from `grid` by fitting on the leading rows and scoring on
/// the trailing `holdout_fraction` of them, then refit on all rows. Ties go
/// to the larger `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn fit_with_holdout(
    h: ArrayView2<'_, f64>,
    targets: &Targets,
    task: Task,
    grid: &[f64],
    holdout_fraction: f64,
    pipeline_hash: &str,
    exec: Execution,
) -> Result<LambdaFit, ReadoutError> {
    let t = TargetMatrix::encode(targets, task)?;
    if grid.is_empty() {
        return Err(ReadoutError::Dimension("empty lambda grid".into()));
    }
    if let Some(&bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(ReadoutError::NegativeLambda(bad));
    }
    let n = h.nrows();
    if n != t.rows() {
        return Err(ReadoutError::Dimension(format!(
            "{n} feature rows, {} targets",
            t.rows()
        )));
    }
    if grid.len() == 1 {
        let model = train_ridge(h, &t, grid[0], pipeline_hash, exec)?;
        return Ok(LambdaFit {
            model,
            scores: vec![LambdaScore {
                lambda: grid[0],
                score: None,
            }],
        });
    }
    let n_hold = ((n as f64) * holdout_fraction).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return Err(ReadoutError::Dimension(format!("holdout of {n_hold} rows out of {n}")));
    }
    let cut = n - n_hold;
    let fit = NormalEquations::from_rows(h.slice(s![..cut, ..]), t.values.slice(s![..cut, ..]), exec)?;
    let hold = NormalEquations::from_rows(h.slice(s![cut.., ..]), t.values.slice(s![cut.., ..]), exec)?;
    let hold_targets = targets_slice(targets, cut..n);
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let score = fit.solve(lambda, exec).ok().and_then(|beta| {
            let y = h.slice(s![cut.., ..]).dot(&beta);
            let m = evaluate(y.view(), &hold_targets, task).ok()?;
            Some(m.error_rate().unwrap_or(m.rmsd))
        });
        scores.push(LambdaScore { lambda, score });
    }
    let best = scores
        .iter()
        .filter_map(|s| s.score.map(|v| (v, s.lambda)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)))
        .map(|(_, l)| l)
        .ok_or(ReadoutError::Singular)?;
    let all = fit.merged(&hold);
    Ok(LambdaFit {
        model: ReadoutModel {
            beta: all.solve(best, exec)?,
            lambda: best,
            encoding: t.encoding,
            pipeline_hash: pipeline_hash.to_string(),
        },
        scores,
    })
}

fn targets_slice(targets: &Targets, range: std::ops::Range<usize>) -> Targets {
    match targets {
        Targets::Classes(c) => Targets::Classes(c[range].to_vec()),
        Targets::Values(v) => Targets::Values(v[range].to_vec()),
    }
}
