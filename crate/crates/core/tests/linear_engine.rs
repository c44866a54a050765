mod common;

use common::{center_columns, gaussian_matrix, prox_gradient_objective, rng, small_instance};
use far_core::linear::{block_update, fit_blocks, BlockFactor, SolverOptions};
use far_core::{LinearFar, PenaltyFamily, PenaltySpec, ScoreMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn lasso_fit(designs: &[DMatrix<f64>], y: &DVector<f64>, lambda: f64, options: SolverOptions) -> far_core::LinearFarModel {
    LinearFar::new(designs, y, 0.0)
        .unwrap()
        .with_options(options)
        .fit(&PenaltySpec::lasso(lambda).unwrap(), None)
        .unwrap()
}

#[test]
fn matches_proximal_gradient_on_small_instance() {
    let mut r = rng(11);
    let designs: Vec<DMatrix<f64>> = (0..2).map(|_| gaussian_matrix(&mut r, 20, 2)).collect();
    let y = common::centered(&designs[0] * DVector::from_column_slice(&[1.0, -0.5]) + gaussian_matrix(&mut r, 20, 1).column(0));
    let model = lasso_fit(&designs, &y, 0.1, SolverOptions::default());
    let oracle = prox_gradient_objective(&designs, &y, 0.1);
    assert!((model.objective - oracle).abs() < 1e-6, "{} vs {}", model.objective, oracle);
}

#[test]
fn zero_penalty_single_predictor_is_least_squares() {
    let mut r = rng(5);
    let theta = gaussian_matrix(&mut r, 25, 3);
    let y = common::centered(DVector::from_fn(25, |i, _| (i as f64 * 0.37).cos()));
    let model = lasso_fit(&[theta.clone()], &y, 0.0, SolverOptions::default());
    let x = center_columns(&theta);
    let ls = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
    for (a, b) in model.etas[0].iter().zip(ls.iter()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn lambda_max_gives_empty_model_and_path_starts_there() {
    let inst = small_instance(3);
    let far = LinearFar::new(&inst.designs, &inst.y, 0.0).unwrap();
    let lmax = far.lambda_max();
    // every block is at or below the threshold at lambda_max
    for f in far.factors() {
        let b = block_update(f, &inst.y, lmax);
        assert!(b.iter().all(|&v| v == 0.0));
    }
    let path = far.path(PenaltyFamily::Lasso, 10).unwrap();
    assert!(path.models[0].is_empty());
    assert!(!path.models[9].is_empty());
    assert!(path.lambdas.windows(2).all(|w| w[1] < w[0]));
    assert!((path.lambdas[9] / path.lambdas[0] - 1e-3).abs() < 1e-12);
}

#[test]
fn warm_path_matches_cold_refits() {
    let inst = small_instance(21);
    let far = LinearFar::new(&inst.designs, &inst.y, 0.0).unwrap();
    let path = far.path(PenaltyFamily::Lasso, 12).unwrap();
    let mut previous = f64::INFINITY;
    for (lambda, warm) in path.lambdas.iter().zip(&path.models) {
        let cold = far.fit(&PenaltySpec::lasso(*lambda).unwrap(), None).unwrap();
        assert!((cold.objective - warm.objective).abs() < 1e-8);
        // the optimal value decreases with the penalty level
        assert!(warm.objective <= previous + 1e-12);
        previous = warm.objective;
    }
}

#[test]
fn predictions_reproduce_fitted_values() {
    let inst = small_instance(8);
    let far = LinearFar::new(&inst.designs, &inst.y, 2.5).unwrap();
    let lambda = 0.3 * far.lambda_max();
    let model = far.fit(&PenaltySpec::scad(lambda).unwrap(), None).unwrap();
    let scores: Vec<ScoreMatrix> = inst
        .designs
        .iter()
        .enumerate()
        .map(|(j, d)| ScoreMatrix {
            predictor: j,
            scores: d.clone(),
        })
        .collect();
    let pred = model.predict_scores(&scores).unwrap();
    for (a, b) in pred.iter().zip(model.fitted_values()) {
        assert!((a - b).abs() < 1e-8);
    }
    for b in model.block_vectors() {
        assert!(b.mean().abs() < 1e-8);
    }
}

#[test]
fn hand_computed_prediction() {
    let theta = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 1.0, 2.0, -1.0, -2.0, 0.0]);
    let y = DVector::from_column_slice(&[1.0, -1.0, 2.0, -2.0]);
    let model = lasso_fit(&[theta.clone()], &y, 0.05, SolverOptions::default());
    let new = DMatrix::from_row_slice(1, 2, &[0.5, 0.25]);
    let pred = model
        .predict_scores(&[ScoreMatrix {
            predictor: 0,
            scores: new,
        }])
        .unwrap();
    // means of the training columns are (0, 0)
    let expect = 0.5 * model.etas[0][0] + 0.25 * model.etas[0][1];
    assert!((pred[0] - expect).abs() < 1e-14);
}

#[test]
fn scad_stage_starts_from_lasso_and_reduces_bias() {
    let mut r = rng(2);
    let theta = gaussian_matrix(&mut r, 40, 2);
    let y = common::centered(&theta * DVector::from_column_slice(&[3.0, 1.0]));
    let far = LinearFar::new(&[theta], &y, 0.0).unwrap();
    let lambda = 0.2;
    let lasso = far.fit(&PenaltySpec::lasso(lambda).unwrap(), None).unwrap();
    let scad = far.fit(&PenaltySpec::scad(lambda).unwrap(), None).unwrap();
    let truth = y.norm();
    // a strong signal is unshrunk under SCAD and shrunk under the Lasso
    assert!((scad.block_vectors()[0].norm() - truth).abs() < 1e-6);
    assert!(lasso.block_vectors()[0].norm() < truth - 0.1);
}

fn kkt_residual(inst: &common::Instance, options: SolverOptions) -> f64 {
    let far = LinearFar::new(&inst.designs, &inst.y, 0.0).unwrap().with_options(options);
    let lambda = inst.ratio * far.lambda_max();
    let model = far.fit(&PenaltySpec::lasso(lambda).unwrap(), None).unwrap();
    assert!(model.converged);
    let n = inst.y.len() as f64;
    let blocks = model.block_vectors();
    let fitted: DVector<f64> = blocks.iter().fold(DVector::zeros(inst.y.len()), |a, b| a + b);
    let mut worst: f64 = 0.0;
    for (j, f) in far.factors().iter().enumerate() {
        let partial = &inst.y - &fitted + &blocks[j];
        if blocks[j].norm() == 0.0 {
            let excess = f.project(&partial).norm() / n.sqrt() - lambda;
            worst = worst.max(excess);
        } else {
            let fixed = block_update(f, &partial, lambda);
            worst = worst.max((fixed - &blocks[j]).norm() / n.sqrt());
        }
    }
    worst
}

#[test]
fn kkt_conditions_hold_at_convergence() {
    for seed in 0..20 {
        let r = kkt_residual(&small_instance(100 + seed), SolverOptions::default());
        assert!(r <= 1e-6, "seed {seed}: {r}");
    }
}

#[test]
fn sweep_cap_reports_non_convergence() {
    let inst = small_instance(4);
    let options = SolverOptions {
        max_sweeps: 1,
        ..SolverOptions::default()
    };
    let factors: Vec<BlockFactor> = inst.designs.iter().map(|d| BlockFactor::new(d).unwrap()).collect();
    let fit = fit_blocks(&factors, &inst.y, &PenaltySpec::lasso(1e-4).unwrap(), None, &options).unwrap();
    assert_eq!(fit.sweeps, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_never_increases(seed in 0u64..10_000) {
        let inst = small_instance(seed);
        let far = LinearFar::new(&inst.designs, &inst.y, 0.0).unwrap();
        let lambda = inst.ratio * far.lambda_max();
        let options = SolverOptions { record_trace: true, ..SolverOptions::default() };
        let fit = fit_blocks(far.factors(), &inst.y, &PenaltySpec::lasso(lambda).unwrap(), None, &options).unwrap();
        let start = inst.y.norm_squared() / (2.0 * inst.y.len() as f64);
        let mut prev = start;
        for &v in &fit.trace {
            prop_assert!(v <= prev + 1e-10 * (1.0 + prev.abs()));
            prev = v;
        }
    }

    #[test]
    fn invariant_to_reparameterizing_designs(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let inst = small_instance(seed);
        let lambda = {
            let far = LinearFar::new(&inst.designs, &inst.y, 0.0).unwrap();
            inst.ratio * far.lambda_max()
        };
        let base = lasso_fit(&inst.designs, &inst.y, lambda, SolverOptions::default());
        let scaled: Vec<DMatrix<f64>> = inst.designs.iter().map(|d| d * -scale).collect();
        let other = lasso_fit(&scaled, &inst.y, lambda, SolverOptions::default());
        for (a, b) in base.block_vectors().iter().zip(other.block_vectors()) {
            prop_assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn blocks_are_centered_and_active_set_matches(seed in 0u64..10_000) {
        let inst = small_instance(seed);
        let far = LinearFar::new(&inst.designs, &inst.y, 0.0).unwrap();
        let model = far.fit(&PenaltySpec::scad(inst.ratio * far.lambda_max()).unwrap(), None).unwrap();
        for (j, b) in model.block_vectors().iter().enumerate() {
            prop_assert!(b.mean().abs() < 1e-8);
            prop_assert_eq!(model.active_set.contains(&j), b.norm() > 0.0);
        }
    }
}
