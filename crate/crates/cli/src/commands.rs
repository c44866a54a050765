use std::path::{Path, PathBuf};

use far_core::basis::{make_basis, project_all, FunctionalDataset};
use far_core::io::{read_curves_path, read_dataset, write_atomic};
use far_core::linear::{objective, BasisInfo, LinearFar, SolverOptions};
use far_core::nonlinear::{fit_nonlinear, threshold_model, NonlinearOptions};
use far_core::penalty::PenaltySpec;
use far_core::simulation::{run_study, QSelection};
use far_core::tuning::{
    tune_cv, tune_validation, LambdaRule, LinearSettings, Method, NonlinearSettings, Tuned, TuningMode, TuningRule,
};
use far_core::linear::DEFAULT_GRID_SIZE;
use far_core::FarModel;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{Lambda, MethodKind, RunConfig, SimulateConfig};
use crate::error::CliError;

const TUNE_Q: [usize; 6] = [5, 6, 7, 8, 9, 10];
const FIT_Q: [usize; 1] = [6];

fn single(list: Vec<usize>, what: &str) -> Result<usize, CliError> {
    match list.as_slice() {
        [v] => Ok(*v),
        _ => Err(CliError::Config(format!(
            "fit takes a single {what}; use `tune` to search over candidates"
        ))),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::Input(e.to_string()))
}

fn method_settings(cfg: &RunConfig) -> Result<Method, CliError> {
    let family = cfg.family()?;
    let grid_size = cfg.grid_size.unwrap_or(DEFAULT_GRID_SIZE);
    if grid_size < 2 {
        return Err(CliError::Config("grid_size must be at least 2".into()));
    }
    let solver = SolverOptions {
        max_sweeps: cfg.max_sweeps.unwrap_or(SolverOptions::default().max_sweeps),
        ..SolverOptions::default()
    };
    if solver.max_sweeps == 0 {
        return Err(CliError::Config("max_sweeps must be positive".into()));
    }
    Ok(match cfg.method() {
        MethodKind::Linear => Method::Linear(LinearSettings {
            grid_size,
            solver,
            ..LinearSettings::new(family)
        }),
        MethodKind::Nonlinear => Method::Nonlinear(NonlinearSettings {
            options: NonlinearOptions {
                grid_size,
                solver,
                ..NonlinearOptions::default()
            },
            threshold: cfg.threshold.unwrap_or(false),
            ..NonlinearSettings::new(family)
        }),
    })
}

fn run_tuning(cfg: &RunConfig, train: &FunctionalDataset, q: Vec<usize>, d: Vec<usize>) -> Result<Tuned, CliError> {
    let method = method_settings(cfg)?;
    let mut rule = TuningRule::validation(q);
    if cfg.method() == MethodKind::Nonlinear {
        rule = rule.with_d_candidates(d);
    }
    rule.mode = cfg.tuning_mode()?;
    rule.basis_kind = cfg.basis_kind()?;
    rule.seed = cfg.seed.unwrap_or(0);
    let tuned = match rule.mode {
        TuningMode::ValidationSet => {
            if !cfg.has_validation()? {
                return Err(CliError::Config(
                    "validation tuning needs --validation-curves and --validation-response".into(),
                ));
            }
            let vc = cfg.require(&cfg.validation_curves, "validation_curves")?;
            let vr = cfg.require(&cfg.validation_response, "validation_response")?;
            let (_, valid) = read_dataset(vc, vr)?;
            tune_validation(train, &valid, &method, &rule)?
        }
        TuningMode::KFoldCv { .. } => tune_cv(train, &method, &rule)?,
    };
    Ok(tuned)
}

fn fit_fixed(cfg: &RunConfig, train: &FunctionalDataset, q: usize, d: usize, lambda: f64) -> Result<FarModel, CliError> {
    let family = cfg.family()?;
    let basis = make_basis(cfg.basis_kind()?, q, train.grid())?;
    let scores = project_all(train.curves(), &basis)?;
    let info = BasisInfo::new(&basis);
    match method_settings(cfg)? {
        Method::Linear(settings) => {
            let far = LinearFar::from_scores(&scores, train.response(), train.response_mean())?
                .with_options(settings.solver);
            let mut model = far.fit(&PenaltySpec::new(family, lambda)?, None)?;
            model.basis = Some(info);
            Ok(FarModel::Linear(model))
        }
        Method::Nonlinear(settings) => {
            let options = NonlinearOptions {
                link_dim: d,
                ..settings.options
            };
            let fit = fit_nonlinear(
                &scores,
                train.response(),
                train.response_mean(),
                family,
                &LambdaRule::Fixed(lambda),
                &options,
            )?;
            let mut model = fit.model;
            model.basis = Some(info);
            if settings.threshold {
                model = threshold_model(&model, lambda);
            }
            Ok(FarModel::Nonlinear(model))
        }
    }
}

#[derive(Serialize)]
struct FitSummary<'a> {
    method: MethodKind,
    q: Option<usize>,
    d: Option<usize>,
    lambda: f64,
    active_set: &'a [usize],
    objective: f64,
    /// Coordinate sweeps (linear) or outer iterations (nonlinear).
    sweeps: usize,
    converged: bool,
    curve_ids: &'a [String],
    fitted_values: Vec<f64>,
}

fn summarize<'a>(model: &'a FarModel, train: &FunctionalDataset, ids: &'a [String]) -> Result<FitSummary<'a>, CliError> {
    let (method, q, d, blocks, penalty, sweeps) = match model {
        FarModel::Linear(m) => (
            MethodKind::Linear,
            m.basis.as_ref().map(|b| b.spec.dim),
            None,
            &m.blocks,
            m.penalty,
            m.sweeps,
        ),
        FarModel::Nonlinear(m) => (
            MethodKind::Nonlinear,
            m.basis.as_ref().map(|b| b.spec.dim),
            Some(m.link_dim),
            &m.blocks,
            m.penalty,
            m.outer_iterations,
        ),
    };
    let blocks: Vec<DVector<f64>> = blocks.iter().map(|b| DVector::from_column_slice(b)).collect();
    Ok(FitSummary {
        method,
        q,
        d,
        lambda: model.lambda(),
        active_set: model.active_set(),
        objective: objective(train.response(), &blocks, &penalty)?,
        sweeps,
        converged: model.converged(),
        curve_ids: ids,
        fitted_values: model.fitted_values(),
    })
}

fn strict_check(strict: bool, model: &FarModel) -> Result<(), CliError> {
    if strict && !model.converged() {
        return Err(CliError::NotConverged(
            "solver stopped at its iteration cap before converging".into(),
        ));
    }
    Ok(())
}

pub fn fit(cfg: &RunConfig, strict: bool) -> Result<(), CliError> {
    let q = single(cfg.q_list(&FIT_Q)?, "q")?;
    let d = single(cfg.d_list(&[6])?, "d")?;
    let lambda = cfg.lambda()?;
    cfg.family()?;
    let curves = cfg.require(&cfg.curves, "curves")?;
    let response = cfg.require(&cfg.response, "response")?;
    let (ids, train) = read_dataset(curves, response)?;
    let model = match lambda {
        Lambda::Fixed(l) => fit_fixed(cfg, &train, q, d, l)?,
        Lambda::Path => run_tuning(cfg, &train, vec![q], vec![d])?.model,
    };
    if let Some(out) = &cfg.out {
        write_json(out, &model)?;
    }
    println!("{}", serde_json::to_string_pretty(&summarize(&model, &train, &ids)?)?);
    strict_check(strict, &model)
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = cfg.require(&cfg.model, "model")?;
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| CliError::Input(format!("cannot read model {}: {e}", model_path.display())))?;
    let model = FarModel::from_json(&text)?;
    let table = read_curves_path(cfg.require(&cfg.curves, "curves")?)?;
    let yhat = model.predict(&table.curves)?;
    let mut csv = String::from("curve_id,prediction\n");
    for (id, v) in table.curve_ids.iter().zip(yhat.iter()) {
        csv.push_str(&format!("{id},{v}\n"));
    }
    match &cfg.out {
        Some(out) => write_atomic(out, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct Chosen {
    lambda: f64,
    q: usize,
    d: Option<usize>,
    error: f64,
}

pub fn tune(cfg: &RunConfig, save_model: Option<&PathBuf>, strict: bool) -> Result<(), CliError> {
    let q = cfg.q_list(&TUNE_Q)?;
    let d = cfg.d_list(&TUNE_Q)?;
    cfg.family()?;
    let curves = cfg.require(&cfg.curves, "curves")?;
    let response = cfg.require(&cfg.response, "response")?;
    let (_, train) = read_dataset(curves, response)?;
    let tuned = run_tuning(cfg, &train, q, d)?;
    if let Some(out) = &cfg.out {
        write_json(out, &tuned.report)?;
    }
    if let Some(path) = save_model {
        write_json(path, &tuned.model)?;
    }
    let r = &tuned.report;
    let chosen = Chosen {
        lambda: r.lambda,
        q: r.q,
        d: r.d,
        error: r.error,
    };
    println!("{}", serde_json::to_string(&chosen)?);
    strict_check(strict, &tuned.model)
}

pub struct SimulateOverrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub penalty: Option<String>,
    pub q: Option<Vec<usize>>,
    pub d: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub records: Option<PathBuf>,
}

pub fn simulate(mut cfg: SimulateConfig, o: SimulateOverrides) -> Result<(), CliError> {
    if let Some(seed) = o.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(r) = o.replicates {
        cfg.simulation.replicates = r;
    }
    if let Some(p) = &o.penalty {
        let family = p.parse().map_err(|e: far_core::FarError| CliError::Config(e.to_string()))?;
        match &mut cfg.study.method {
            Method::Linear(s) => s.family = family,
            Method::Nonlinear(s) => s.family = family,
        }
    }
    if let Some(q) = o.q {
        match &mut cfg.study.q_selection {
            QSelection::Holdout { candidates, .. } => *candidates = q,
            QSelection::Tune => cfg.study.rule.q_candidates = q,
        }
    }
    if let Some(d) = o.d {
        cfg.study.rule.d_candidates = d;
    }
    cfg.simulation
        .validate()
        .map_err(|e| CliError::Config(format!("invalid scenario: {e}")))?;
    let result = run_study(&cfg.simulation, &cfg.study).map_err(|e| CliError::Config(e.to_string()))?;
    let csv = result.to_csv();
    let jsonl = result.to_jsonl()?;
    match &o.out {
        Some(out) => write_atomic(out, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let records = o.records.or_else(|| o.out.as_ref().map(|p| p.with_extension("jsonl")));
    if let Some(path) = records {
        write_atomic(&path, jsonl.as_bytes())?;
    }
    if result.failures > 0 {
        eprintln!("{} of {} replicates failed; see the records", result.failures, result.records.len());
    }
    Ok(())
}
