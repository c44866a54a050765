mod common;

use far_core::basis::{fourier_sine_values, make_basis, BasisKind};
use far_core::linear::LinearFar;
use far_core::penalty::PenaltySpec;
use far_core::simulation::{
    evaluate_pe, evaluate_selection, generate_replicate, generate_seeded, run_study, QSelection, SignalConvention,
    SimConfig, StudySettings,
};
use far_core::tuning::{LinearSettings, Method, TuningRule};
use far_core::{FarModel, PenaltyFamily};
use nalgebra::DVector;

#[test]
fn noiseless_linear_response_is_exact_inner_product() {
    let mut cfg = SimConfig::linear(30, 5, 3, 0.0);
    cfg.sigma_x = 0.0;
    cfg.grid_size = 50;
    let (data, truth) = generate_seeded(&cfg, 7).unwrap();
    let y = data.dataset.raw_response();
    for i in 0..30 {
        let expect: f64 = (0..3)
            .map(|j| (0..4).map(|l| data.theta[j][(i, l)] * truth.etas[j][l]).sum::<f64>())
            .sum();
        assert!((y[i] - expect).abs() < 1e-12);
    }
    for j in 3..5 {
        assert!(truth.etas[j].iter().all(|&v| v == 0.0));
        assert_eq!(truth.link(j, 1.7), 0.0);
        assert!(data.indices[j].is_none());
    }
    for j in 0..3 {
        let norm: f64 = truth.etas[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SimConfig::nonlinear(20, 6, 0.5);
    let a = generate_replicate(&cfg, 3).unwrap();
    let b = generate_replicate(&cfg, 3).unwrap();
    assert_eq!(a.train.dataset.curves().curves(), b.train.dataset.curves().curves());
    assert_eq!(a.test.dataset.raw_response(), b.test.dataset.raw_response());
    assert_eq!(a.truth, b.truth);
    let c = generate_replicate(&cfg, 4).unwrap();
    assert_ne!(a.truth, c.truth);
}

#[test]
fn nonlinear_contributions_follow_the_links() {
    let mut cfg = SimConfig::nonlinear(40, 5, 0.0);
    cfg.grid_size = 40;
    let (data, _) = generate_seeded(&cfg, 1).unwrap();
    let u1 = data.indices[0].as_ref().unwrap();
    let u2 = data.indices[1].as_ref().unwrap();
    let y = data.dataset.raw_response();
    for i in 0..40 {
        let expect = u1[i] + (-u2[i] + u2[i].sin());
        assert!((y[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn noiseless_single_signal_recovers_coefficient_function() {
    let mut cfg = SimConfig::linear(60, 1, 1, 0.0);
    cfg.sigma_x = 0.0;
    cfg.signal = SignalConvention::Quadrature;
    let (data, truth) = generate_seeded(&cfg, 3).unwrap();
    let grid = data.dataset.grid();
    let basis = make_basis(BasisKind::Fourier, 4, grid).unwrap();
    let far = LinearFar::from_dataset(&data.dataset, &basis).unwrap();
    let model = far.fit(&PenaltySpec::lasso(0.0).unwrap(), None).unwrap();
    let phi = basis.values();
    let raw = fourier_sine_values(4, grid.points());
    let eta_hat = DVector::from_column_slice(&model.etas[0]);
    let beta_hat = phi.tr_mul(&eta_hat);
    let beta = raw.tr_mul(&DVector::from_column_slice(&truth.etas[0]));
    assert!((beta_hat - beta).amax() < 1e-2);
}

#[test]
fn null_model_error_is_spread_about_training_mean() {
    let cfg = SimConfig::linear(50, 3, 2, 1.0);
    let rep = generate_replicate(&cfg, 0).unwrap();
    let basis = make_basis(BasisKind::OrthoCubicSpline, 5, rep.train.dataset.grid()).unwrap();
    let far = LinearFar::from_dataset(&rep.train.dataset, &basis).unwrap();
    let empty = far.fit(&PenaltySpec::lasso(2.0 * far.lambda_max()).unwrap(), None).unwrap();
    assert!(empty.is_empty());
    let pe = evaluate_pe(&FarModel::Linear(empty), &rep.test.dataset).unwrap();
    let ybar = rep.train.dataset.response_mean();
    let y = rep.test.dataset.raw_response();
    let expect = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / y.len() as f64;
    assert!((pe - expect).abs() < 1e-12);
}

#[test]
fn oracle_fit_error_approaches_noise_variance() {
    let mut cfg = SimConfig::linear(2000, 2, 2, 1.0);
    cfg.grid_size = 100;
    let rep = generate_replicate(&cfg, 0).unwrap();
    let basis = make_basis(BasisKind::Fourier, 4, rep.train.dataset.grid()).unwrap();
    let far = LinearFar::from_dataset(&rep.train.dataset, &basis).unwrap();
    let model = far.fit(&PenaltySpec::lasso(0.0).unwrap(), None).unwrap();
    let pe = evaluate_pe(&FarModel::Linear(model), &rep.test.dataset).unwrap();
    assert!((0.9..1.1).contains(&pe), "{pe}");
}

#[test]
fn selection_rates_by_construction() {
    let cfg = SimConfig::linear(10, 10, 4, 1.0);
    let (_, truth) = generate_seeded(&cfg, 0).unwrap();
    assert_eq!(evaluate_selection(&[0, 1, 2, 3], &truth), (0.0, 0.0));
    let (fnr, fpr) = evaluate_selection(&[0, 1, 2, 4], &truth);
    assert!((fnr - 0.25).abs() < 1e-15 && (fpr - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(evaluate_selection(&[], &truth), (1.0, 0.0));
    assert_eq!(evaluate_selection(&(0..10).collect::<Vec<_>>(), &truth), (0.0, 1.0));
}

fn tiny_settings() -> StudySettings {
    StudySettings {
        method: Method::Linear(LinearSettings {
            grid_size: 20,
            ..LinearSettings::new(PenaltyFamily::scad())
        }),
        rule: TuningRule::validation(vec![5]),
        q_selection: QSelection::Tune,
    }
}

#[test]
fn study_outputs_are_reproducible() {
    let mut cfg = SimConfig::linear(30, 4, 2, 1.0);
    cfg.grid_size = 40;
    cfg.replicates = 2;
    cfg.seed = 99;
    let a = run_study(&cfg, &tiny_settings()).unwrap();
    let b = run_study(&cfg, &tiny_settings()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    assert_eq!(a.to_jsonl().unwrap().lines().count(), 2);
    assert_eq!(a.to_csv().lines().count(), 2);
    assert!(a.metrics.se_pe.is_some());
    for r in &a.records {
        let (fnr, fpr) = (r.fnr.unwrap(), r.fpr.unwrap());
        assert!((0.0..=1.0).contains(&fnr) && (0.0..=1.0).contains(&fpr));
    }

    cfg.replicates = 1;
    let single = run_study(&cfg, &tiny_settings()).unwrap();
    assert_eq!(single.metrics.se_pe, None);
    assert!(single.to_csv().trim_end().ends_with(",NA"));
}
