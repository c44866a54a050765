//! Synthetic functional regression designs and replicate studies.
//!
//! Predictors are `X_ij(t_k) = b(t_k)^T theta_ij + w_ijk` with the
//! four-function sine system `b`, `theta_ij ~ N(0, I)` and white noise of
//! standard deviation `sigma_x` on a uniform grid. The first `s` predictors
//! carry signal through unit-norm index vectors `eta_j`; responses add
//! Gaussian noise of standard deviation `sigma_y`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{fourier_sine_values, CurveSet, FunctionalDataset, TimeGrid};
use crate::error::{FarError, Result};
use crate::model::FarModel;
use crate::tuning::{holdout_q_selection, tune_validation, Method, TuningRule};

/// Dimension of the generating sine system.
pub const GENERATING_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `f_j(X) = u_j`.
    Linear,
    /// `f_1(X) = u_1`, `f_2(X) = -u_2 + sin(u_2)`, zero otherwise.
    Nonlinear,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Nonlinear => "nonlinear",
        })
    }
}

/// How the scalar index `u_ij` of a signal predictor is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalConvention {
    /// `u_ij = theta_ij^T eta_j` on the generating coefficients.
    #[default]
    Coefficient,
    /// `u_ij = int beta_j(t) X_ij(t) dt` by trapezoidal quadrature of the
    /// observed curve, with `beta_j = b^T eta_j`.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RngAlgorithm {
    #[default]
    ChaCha8,
}

fn default_sigma_x() -> f64 {
    0.5
}

fn default_grid_size() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    #[serde(default = "default_sigma_x")]
    pub sigma_x: f64,
    pub sigma_y: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub signal: SignalConvention,
    #[serde(default)]
    pub rng: RngAlgorithm,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn linear(n: usize, p: usize, s: usize, sigma_y: f64) -> Self {
        Self {
            scenario: Scenario::Linear,
            n,
            p,
            s,
            sigma_x: default_sigma_x(),
            sigma_y,
            grid_size: default_grid_size(),
            seed: 0,
            replicates: 1,
            signal: SignalConvention::default(),
            rng: RngAlgorithm::ChaCha8,
        }
    }

    pub fn nonlinear(n: usize, p: usize, sigma_y: f64) -> Self {
        Self {
            scenario: Scenario::Nonlinear,
            s: 2,
            ..Self::linear(n, p, 2, sigma_y)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FarError::InvalidInput(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if self.s > self.p {
            return bad(format!("s = {} exceeds p = {}", self.s, self.p));
        }
        if self.scenario == Scenario::Nonlinear && self.s > 2 {
            return bad("the nonlinear design has at most two signal predictors".into());
        }
        if !(self.sigma_x >= 0.0 && self.sigma_y >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if self.grid_size < 2 {
            return bad("grid needs at least two points".into());
        }
        if self.replicates == 0 {
            return bad("need at least one replicate".into());
        }
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.seed.wrapping_add(replicate as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub scenario: Scenario,
    /// Generating-basis index vectors; zero for noise predictors.
    pub etas: Vec<Vec<f64>>,
    pub signals: Vec<usize>,
}

impl SimTruth {
    /// Unit-norm Gaussian directions for the first `s` predictors.
    pub fn draw<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Self {
        let mut etas = vec![vec![0.0; GENERATING_DIM]; config.p];
        for eta in etas.iter_mut().take(config.s) {
            loop {
                let v: Vec<f64> = (0..GENERATING_DIM).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    *eta = v.iter().map(|x| x / norm).collect();
                    break;
                }
            }
        }
        Self {
            scenario: config.scenario,
            etas,
            signals: (0..config.s).collect(),
        }
    }

    /// `g_j(u)` for predictor `j`.
    pub fn link(&self, j: usize, u: f64) -> f64 {
        if !self.signals.contains(&j) {
            return 0.0;
        }
        match (self.scenario, j) {
            (Scenario::Linear, _) => u,
            (Scenario::Nonlinear, 0) => u,
            (Scenario::Nonlinear, 1) => -u + u.sin(),
            (Scenario::Nonlinear, _) => 0.0,
        }
    }
}

/// A generated dataset with its noiseless signal.
#[derive(Debug, Clone)]
pub struct SimData {
    pub dataset: FunctionalDataset,
    /// Index values of each signal predictor (`None` for noise).
    pub indices: Vec<Option<DVector<f64>>>,
    /// `sum_j g_j(u_ij)` before response noise.
    pub signal: DVector<f64>,
    pub theta: Vec<DMatrix<f64>>,
}

/// Draws one dataset for a fixed truth.
pub fn generate_dataset<R: Rng + ?Sized>(config: &SimConfig, truth: &SimTruth, rng: &mut R) -> Result<SimData> {
    config.validate()?;
    let grid = TimeGrid::uniform(config.grid_size)?;
    let b = fourier_sine_values(GENERATING_DIM, grid.points());
    let (n, t) = (config.n, config.grid_size);
    let mut curves = Vec::with_capacity(config.p);
    let mut thetas = Vec::with_capacity(config.p);
    for _ in 0..config.p {
        let theta = DMatrix::from_fn(n, GENERATING_DIM, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = &theta * &b;
        if config.sigma_x > 0.0 {
            for v in x.iter_mut() {
                *v += config.sigma_x * rng.sample::<f64, _>(StandardNormal);
            }
        }
        debug_assert_eq!(x.ncols(), t);
        curves.push(x);
        thetas.push(theta);
    }
    let mut signal = DVector::zeros(n);
    let mut indices = vec![None; config.p];
    for &j in &truth.signals {
        let eta = DVector::from_column_slice(&truth.etas[j]);
        let u = match config.signal {
            SignalConvention::Coefficient => &thetas[j] * &eta,
            SignalConvention::Quadrature => {
                let beta = b.tr_mul(&eta);
                let wbeta = DVector::from_iterator(t, grid.weights().iter().zip(beta.iter()).map(|(w, v)| w * v));
                &curves[j] * wbeta
            }
        };
        for i in 0..n {
            signal[i] += truth.link(j, u[i]);
        }
        indices[j] = Some(u);
    }
    let noise: Vec<f64> = (0..n)
        .map(|_| config.sigma_y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
    let dataset = FunctionalDataset::new(CurveSet::new(grid, curves)?, &y)?;
    Ok(SimData {
        dataset,
        indices,
        signal,
        theta: thetas,
    })
}

/// Convenience: truth and one dataset from a seed.
pub fn generate_seeded(config: &SimConfig, seed: u64) -> Result<(SimData, SimTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = SimTruth::draw(config, &mut rng);
    let data = generate_dataset(config, &truth, &mut rng)?;
    Ok((data, truth))
}

/// Training, validation and test sets sharing one truth.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub seed: u64,
    pub truth: SimTruth,
    pub train: SimData,
    pub valid: SimData,
    pub test: SimData,
}

pub fn generate_replicate(config: &SimConfig, replicate: usize) -> Result<Replicate> {
    let seed = config.replicate_seed(replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = SimTruth::draw(config, &mut rng);
    let train = generate_dataset(config, &truth, &mut rng)?;
    let valid = generate_dataset(config, &truth, &mut rng)?;
    let test = generate_dataset(config, &truth, &mut rng)?;
    Ok(Replicate {
        seed,
        truth,
        train,
        valid,
        test,
    })
}

/// `(fnr, fpr)`: missed signals over `s`, selected noise predictors over
/// `p - s`. An empty denominator gives a rate of zero.
pub fn evaluate_selection(active: &[usize], truth: &SimTruth) -> (f64, f64) {
    let p = truth.etas.len();
    let s = truth.signals.len();
    let missed = truth.signals.iter().filter(|j| !active.contains(j)).count();
    let false_pos = active.iter().filter(|j| !truth.signals.contains(j)).count();
    let fnr = if s == 0 { 0.0 } else { missed as f64 / s as f64 };
    let fpr = if p == s { 0.0 } else { false_pos as f64 / (p - s) as f64 };
    (fnr, fpr)
}

/// Mean squared prediction error on `test`.
pub fn evaluate_pe(model: &FarModel, test: &FunctionalDataset) -> Result<f64> {
    let pred = model.predict(test.curves())?;
    let truth = test.raw_response();
    Ok((pred - &truth).norm_squared() / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub fnr: f64,
    pub fpr: f64,
    pub mean_pe: f64,
    /// `sd(PE) / sqrt(replicates)`; `None` with a single replicate.
    pub se_pe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QSelection {
    /// Tune the basis dimension together with the penalty level.
    Tune,
    /// Choose it beforehand by held-out reconstruction of validation curves.
    Holdout { fraction: f64, candidates: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub method: Method,
    pub rule: TuningRule,
    pub q_selection: QSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub pe: Option<f64>,
    pub q: Option<usize>,
    pub d: Option<usize>,
    pub lambda: Option<f64>,
    pub active_set: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: SimConfig,
    pub method_label: String,
    pub metrics: SelectionMetrics,
    pub failures: usize,
    pub records: Vec<ReplicateRecord>,
}

pub fn method_label(method: &Method) -> String {
    match method {
        Method::Linear(s) => format!("far_linear_{}", family_tag(&s.family)),
        Method::Nonlinear(s) => format!("far_nonlinear_{}", family_tag(&s.family)),
    }
}

fn family_tag(f: &crate::penalty::PenaltyFamily) -> &'static str {
    if f.is_lasso() {
        "lasso"
    } else {
        "scad"
    }
}

/// Pairwise summation, insensitive to how replicates were scheduled.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Fits and scores one replicate.
pub fn run_replicate(config: &SimConfig, settings: &StudySettings, replicate: usize) -> Result<ReplicateRecord> {
    let rep = generate_replicate(config, replicate)?;
    let mut rule = settings.rule.clone();
    rule.seed = rep.seed;
    if let QSelection::Holdout { fraction, candidates } = &settings.q_selection {
        let report = holdout_q_selection(
            rep.valid.dataset.curves(),
            *fraction,
            candidates,
            rule.basis_kind,
            rep.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?;
        rule.q_candidates = vec![report.q];
    }
    let tuned = tune_validation(&rep.train.dataset, &rep.valid.dataset, &settings.method, &rule)?;
    let (fnr, fpr) = evaluate_selection(tuned.model.active_set(), &rep.truth);
    let pe = evaluate_pe(&tuned.model, &rep.test.dataset)?;
    Ok(ReplicateRecord {
        replicate,
        seed: rep.seed,
        fnr: Some(fnr),
        fpr: Some(fpr),
        pe: Some(pe),
        q: Some(tuned.report.q),
        d: tuned.report.d,
        lambda: Some(tuned.report.lambda),
        active_set: tuned.model.active_set().to_vec(),
        error: None,
    })
}

/// Runs `config.replicates` independent replicates. A failing replicate is
/// recorded with its error and left out of the aggregates.
pub fn run_study(config: &SimConfig, settings: &StudySettings) -> Result<StudyResult> {
    config.validate()?;
    let records: Vec<ReplicateRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(config, settings, r).unwrap_or_else(|e| ReplicateRecord {
                replicate: r,
                seed: config.replicate_seed(r),
                fnr: None,
                fpr: None,
                pe: None,
                q: None,
                d: None,
                lambda: None,
                active_set: Vec::new(),
                error: Some(e.to_string()),
            })
        })
        .collect();
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    if ok.is_empty() {
        return Err(FarError::InvalidInput(format!(
            "every replicate failed; first error: {}",
            records[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    let pes: Vec<f64> = ok.iter().filter_map(|r| r.pe).collect();
    let fnrs: Vec<f64> = ok.iter().filter_map(|r| r.fnr).collect();
    let fprs: Vec<f64> = ok.iter().filter_map(|r| r.fpr).collect();
    let mean_pe = mean(&pes);
    let se_pe = if pes.len() > 1 {
        let dev: Vec<f64> = pes.iter().map(|p| (p - mean_pe).powi(2)).collect();
        let var = pairwise_sum(&dev) / (pes.len() - 1) as f64;
        Some(var.sqrt() / (pes.len() as f64).sqrt())
    } else {
        None
    };
    Ok(StudyResult {
        config: config.clone(),
        method_label: method_label(&settings.method),
        metrics: SelectionMetrics {
            fnr: mean(&fnrs),
            fpr: mean(&fprs),
            mean_pe,
            se_pe,
        },
        failures: records.len() - ok.len(),
        records,
    })
}

pub const STUDY_CSV_HEADER: &str = "scenario,n,p,s,sigma_y,method,FN,FP,meanPE,sePE";

impl StudyResult {
    /// One table row in the study CSV layout.
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let m = &self.metrics;
        let se = m.se_pe.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{}",
            c.scenario, c.n, c.p, c.s, c.sigma_y, self.method_label, m.fnr, m.fpr, m.mean_pe, se
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{STUDY_CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}
