#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Benchmark data root: `PELM_DATA_DIR`, or `data/` at the workspace root.
pub fn data_dir() -> PathBuf {
    std::env::var_os("PELM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")))
}

pub fn mnist_dir() -> Option<PathBuf> {
    let dir = data_dir().join("mnist");
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| dir.join(f).is_file())
    .then_some(dir)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Ridge solution through the singular value decomposition of `h`:
/// `beta = V diag(s / (s^2 + lambda)) U^T t`. Never forms `h^T h`.
pub fn ridge_by_svd(h: &Array2<f64>, t: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let svd = to_dmatrix(h).svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let ut_t = u.transpose() * to_dmatrix(t);
    let mut scaled = ut_t;
    for (i, s) in svd.singular_values.iter().enumerate() {
        let f = s / (s * s + lambda);
        scaled.row_mut(i).scale_mut(f);
    }
    let beta = v_t.transpose() * scaled;
    Array2::from_shape_fn((beta.nrows(), beta.ncols()), |(i, j)| beta[(i, j)])
}

/// Frobenius norm of `a - b` over the norm of `b`.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff: f64 = (a - b).iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm
}

/// Numerical rank: singular values above `rel_tol` times the largest.
pub fn numerical_rank(a: &Array2<f64>, rel_tol: f64) -> usize {
    let s = to_dmatrix(a).singular_values();
    let max = s.iter().copied().fold(0.0, f64::max);
    s.iter().filter(|&&x| x > rel_tol * max).count()
}
