mod common;

use ndarray::Array2;
use pelm::parallel::Execution;
use pelm::readout::{predict, train_ridge, NormalEquations, TargetEncoding, TargetMatrix};
use pelm::ReadoutError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{normal_matrix, relative_error, ridge_by_svd};

fn scalar_targets(t: Array2<f64>) -> TargetMatrix {
    TargetMatrix {
        values: t,
        encoding: TargetEncoding::Scalar,
    }
}

#[test]
fn seven_by_four_matches_svd_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let h = normal_matrix(&mut rng, 7, 4);
    let t = normal_matrix(&mut rng, 7, 1);
    let model = train_ridge(h.view(), &scalar_targets(t.clone()), 0.1, "", Execution::Sequential).unwrap();
    let oracle = ridge_by_svd(&h, &t, 0.1);
    assert!(relative_error(&model.beta, &oracle) <= 1e-10);
}

#[test]
fn random_instances_match_svd_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let lambda = [0.0, 0.01, 1.0][case % 3];
        let m = rng.random_range(1..=20);
        let n = if lambda == 0.0 {
            rng.random_range(m..=50)
        } else {
            rng.random_range(1..=50)
        };
        let k = rng.random_range(1..=5);
        let h = normal_matrix(&mut rng, n, m);
        let t = normal_matrix(&mut rng, n, k);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let model = train_ridge(h.view(), &scalar_targets(t.clone()), lambda, "", exec).unwrap();
            let err = relative_error(&model.beta, &ridge_by_svd(&h, &t, lambda));
            assert!(
                err <= 1e-8,
                "case {case}: n={n} m={m} k={k} lambda={lambda} error {err:e}"
            );
        }
    }
}

#[test]
fn wide_matrix_without_regularization_is_singular() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = normal_matrix(&mut rng, 3, 6);
    let t = normal_matrix(&mut rng, 3, 1);
    let err = train_ridge(h.view(), &scalar_targets(t.clone()), 0.0, "", Execution::Sequential).unwrap_err();
    assert!(matches!(err, ReadoutError::Singular), "{err:?}");
    // Any positive regularization makes the system solvable.
    let model = train_ridge(h.view(), &scalar_targets(t.clone()), 1e-3, "", Execution::Sequential).unwrap();
    assert!(relative_error(&model.beta, &ridge_by_svd(&h, &t, 1e-3)) <= 1e-8);
}

#[test]
fn square_system_interpolates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = normal_matrix(&mut rng, 12, 12);
    let t = normal_matrix(&mut rng, 12, 3);
    let model = train_ridge(h.view(), &scalar_targets(t.clone()), 0.0, "", Execution::Parallel).unwrap();
    let y = predict(h.view(), &model).unwrap();
    assert!((&y - &t).iter().all(|d| d.abs() <= 1e-8));
}

#[test]
fn accumulated_batches_match_one_shot_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let h = normal_matrix(&mut rng, 90, 15);
    let t = normal_matrix(&mut rng, 90, 2);
    let mut eq = NormalEquations::zeros(15, 2);
    for start in (0..90).step_by(25) {
        let end = (start + 25).min(90);
        eq.add_rows(
            h.slice(ndarray::s![start..end, ..]),
            t.slice(ndarray::s![start..end, ..]),
            Execution::Sequential,
        )
        .unwrap();
    }
    let beta = eq.solve(0.5, Execution::Sequential).unwrap();
    assert!(relative_error(&beta, &ridge_by_svd(&h, &t, 0.5)) <= 1e-10);
}
