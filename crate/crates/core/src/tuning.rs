//! Penalty-level and basis-dimension selection.
//!
//! Two rules are supported: prediction error on a separate validation set,
//! and k-fold cross-validation with seeded random folds. Basis dimensions
//! are searched over candidate lists; the penalty level is searched along a
//! warm-started path for each candidate.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{make_basis, project_all, BasisKind, CurveSet, FunctionalDataset, ScoreMatrix};
use crate::error::{FarError, Result};
use crate::linear::{
    log_grid, BasisInfo, LinearFar, LinearFarModel, SolverOptions, DEFAULT_GRID_SIZE, DEFAULT_MIN_RATIO,
};
use crate::model::FarModel;
use crate::nonlinear::{fit_nonlinear, threshold_model, NonlinearOptions};
use crate::penalty::PenaltyFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Prefer the larger penalty level.
    #[default]
    Sparsest,
    Densest,
}

/// How a fit picks its penalty level.
#[derive(Debug, Clone)]
pub enum LambdaRule<'a> {
    /// Raw validation scores and responses on the original scale.
    Validation {
        scores: &'a [ScoreMatrix],
        response: &'a DVector<f64>,
    },
    KFold { k: usize, seed: u64 },
    Fixed(f64),
}

/// A [`LambdaRule`] resolved against concrete design matrices.
#[derive(Debug, Clone)]
pub enum SelectionTarget<'a> {
    Validation {
        designs: Vec<DMatrix<f64>>,
        response: &'a DVector<f64>,
    },
    KFold { k: usize, seed: u64 },
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct PathSelection {
    pub lambdas: Vec<f64>,
    /// Selection error per level (validation MSE, mean CV MSE, or training
    /// MSE for fixed levels).
    pub errors: Vec<f64>,
    pub chosen: usize,
    pub model: LinearFarModel,
    /// `fold_errors[f][l]`: held-out MSE of fold `f` at level `l`.
    pub fold_errors: Option<Vec<Vec<f64>>>,
}

fn mse(pred: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (pred - truth).norm_squared() / truth.len().max(1) as f64
}

/// Index of the minimum under the tie-break rule (levels ordered from the
/// largest penalty down).
pub fn argmin_with_tie_break(errors: &[f64], tie_break: TieBreak) -> usize {
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        let better = match tie_break {
            TieBreak::Sparsest => e < errors[best],
            TieBreak::Densest => e <= errors[best],
        };
        if better || errors[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Seeded random partition of `0..n` into `k` folds whose sizes differ by at
/// most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(FarError::InvalidTuning(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(FarError::InvalidTuning(format!(
            "{k} folds requested for {n} observations"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn select_rows(designs: &[DMatrix<f64>], rows: &[usize]) -> Vec<DMatrix<f64>> {
    designs.iter().map(|d| d.select_rows(rows)).collect()
}

fn as_scores(designs: &[DMatrix<f64>]) -> Vec<ScoreMatrix> {
    designs
        .iter()
        .enumerate()
        .map(|(predictor, d)| ScoreMatrix {
            predictor,
            scores: d.clone(),
        })
        .collect()
}

/// Fits a warm-started path on `designs` and picks a level by `target`.
#[allow(clippy::too_many_arguments)]
pub fn select_lambda(
    designs: &[DMatrix<f64>],
    y: &DVector<f64>,
    response_mean: f64,
    family: PenaltyFamily,
    grid_size: usize,
    solver: &SolverOptions,
    target: &SelectionTarget<'_>,
    tie_break: TieBreak,
) -> Result<PathSelection> {
    let far = LinearFar::new(designs, y, response_mean)?.with_options(*solver);
    let lmax = far.lambda_max();
    match target {
        SelectionTarget::Fixed(lambda) => {
            let lambdas = if *lambda >= lmax || lmax <= 0.0 {
                vec![*lambda]
            } else {
                let ratio = (lambda / lmax).max(f64::MIN_POSITIVE);
                let mut g = log_grid(lmax, grid_size.max(2), ratio);
                // the endpoint must be exactly the requested level
                *g.last_mut().expect("nonempty grid") = *lambda;
                g.dedup_by(|a, b| a >= b);
                g
            };
            let path = far.path_with_lambdas(family, &lambdas)?;
            let errors: Vec<f64> = path
                .models
                .iter()
                .map(|m| {
                    let fitted = DVector::from_vec(m.fitted_values());
                    mse(&fitted, &y.add_scalar(response_mean))
                })
                .collect();
            let chosen = path.len() - 1;
            let model = path.models[chosen].clone();
            Ok(PathSelection {
                lambdas,
                errors,
                chosen,
                model,
                fold_errors: None,
            })
        }
        SelectionTarget::Validation { designs: vd, response } => {
            if vd.len() != designs.len() {
                return Err(FarError::DimensionMismatch(
                    "validation set has a different number of predictors".into(),
                ));
            }
            if lmax <= 0.0 {
                return Err(FarError::InvalidInput("lambda_max is zero".into()));
            }
            let lambdas = log_grid(lmax, grid_size.max(2), DEFAULT_MIN_RATIO);
            let path = far.path_with_lambdas(family, &lambdas)?;
            let vscores = as_scores(vd);
            let errors = path
                .models
                .iter()
                .map(|m| Ok(mse(&m.predict_scores(&vscores)?, response)))
                .collect::<Result<Vec<f64>>>()?;
            let chosen = argmin_with_tie_break(&errors, tie_break);
            let model = path.models[chosen].clone();
            Ok(PathSelection {
                lambdas,
                errors,
                chosen,
                model,
                fold_errors: None,
            })
        }
        SelectionTarget::KFold { k, seed } => {
            let n = y.len();
            let folds = fold_assignment(n, *k, *seed)?;
            let raw = y.add_scalar(response_mean);
            let mut fold_problems = Vec::with_capacity(folds.len());
            let mut top = lmax;
            for held in &folds {
                let train: Vec<usize> = (0..n).filter(|i| held.binary_search(i).is_err()).collect();
                let y_train: Vec<f64> = train.iter().map(|&i| raw[i]).collect();
                let mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
                let yc = DVector::from_iterator(train.len(), y_train.iter().map(|v| v - mean));
                let problem =
                    LinearFar::new(&select_rows(designs, &train), &yc, mean)?.with_options(*solver);
                top = top.max(problem.lambda_max());
                fold_problems.push(problem);
            }
            if top <= 0.0 {
                return Err(FarError::InvalidInput("lambda_max is zero".into()));
            }
            let lambdas = log_grid(top, grid_size.max(2), DEFAULT_MIN_RATIO);
            let mut fold_errors = Vec::with_capacity(folds.len());
            for (held, problem) in folds.iter().zip(&fold_problems) {
                let path = problem.path_with_lambdas(family, &lambdas)?;
                let held_scores = as_scores(&select_rows(designs, held));
                let truth = DVector::from_iterator(held.len(), held.iter().map(|&i| raw[i]));
                let errs = path
                    .models
                    .iter()
                    .map(|m| Ok(mse(&m.predict_scores(&held_scores)?, &truth)))
                    .collect::<Result<Vec<f64>>>()?;
                fold_errors.push(errs);
            }
            let errors: Vec<f64> = (0..lambdas.len())
                .map(|l| fold_errors.iter().map(|f| f[l]).sum::<f64>() / folds.len() as f64)
                .collect();
            let chosen = argmin_with_tie_break(&errors, tie_break);
            let path = far.path_with_lambdas(family, &lambdas[..=chosen])?;
            let model = path.models[chosen].clone();
            Ok(PathSelection {
                lambdas,
                errors,
                chosen,
                model,
                fold_errors: Some(fold_errors),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TuningMode {
    ValidationSet,
    KFoldCv { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRule {
    #[serde(flatten)]
    pub mode: TuningMode,
    pub q_candidates: Vec<usize>,
    /// Link dimensions; ignored by linear fits.
    #[serde(default)]
    pub d_candidates: Vec<usize>,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default = "default_basis_kind")]
    pub basis_kind: BasisKind,
    #[serde(default)]
    pub seed: u64,
}

fn default_basis_kind() -> BasisKind {
    BasisKind::OrthoCubicSpline
}

impl TuningRule {
    pub fn validation(q_candidates: Vec<usize>) -> Self {
        Self {
            mode: TuningMode::ValidationSet,
            q_candidates,
            d_candidates: Vec::new(),
            tie_break: TieBreak::Sparsest,
            basis_kind: BasisKind::OrthoCubicSpline,
            seed: 0,
        }
    }

    pub fn k_fold(k: usize, q_candidates: Vec<usize>, seed: u64) -> Self {
        Self {
            mode: TuningMode::KFoldCv { k },
            seed,
            ..Self::validation(q_candidates)
        }
    }

    pub fn with_d_candidates(mut self, d: Vec<usize>) -> Self {
        self.d_candidates = d;
        self
    }

    fn check(&self, method: &Method) -> Result<()> {
        if self.q_candidates.is_empty() {
            return Err(FarError::InvalidTuning("no basis dimension candidates".into()));
        }
        if matches!(method, Method::Nonlinear(_)) {
            if self.d_candidates.is_empty() {
                return Err(FarError::InvalidTuning("no link dimension candidates".into()));
            }
            if let Some(d) = self.d_candidates.iter().find(|&&d| d < 4) {
                return Err(FarError::InvalidTuning(format!("link dimension {d} is below 4")));
            }
        }
        if let TuningMode::KFoldCv { k } = self.mode {
            if k < 2 {
                return Err(FarError::InvalidTuning(format!("need at least 2 folds, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSettings {
    pub family: PenaltyFamily,
    pub grid_size: usize,
    pub solver: SolverOptions,
}

impl LinearSettings {
    pub fn new(family: PenaltyFamily) -> Self {
        Self {
            family,
            grid_size: DEFAULT_GRID_SIZE,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSettings {
    pub family: PenaltyFamily,
    /// Link dimension is overwritten by each tuning candidate.
    pub options: NonlinearOptions,
    /// Apply the block-norm threshold at the selected level after fitting.
    pub threshold: bool,
}

impl NonlinearSettings {
    pub fn new(family: PenaltyFamily) -> Self {
        Self {
            family,
            options: NonlinearOptions::default(),
            threshold: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Linear(LinearSettings),
    Nonlinear(NonlinearSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub q: usize,
    pub d: Option<usize>,
    pub lambdas: Vec<f64>,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub mode: TuningMode,
    pub lambda: f64,
    pub q: usize,
    pub d: Option<usize>,
    pub error: f64,
    pub surface: Vec<SurfaceCell>,
    /// Per-fold errors of the chosen cell (cross-validation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_errors: Option<Vec<Vec<f64>>>,
}

impl TuningReport {
    /// `(cell, level)` of the surface minimum under the tie-break rule,
    /// scanning cells in order.
    pub fn surface_argmin(surface: &[SurfaceCell], tie_break: TieBreak) -> (usize, usize) {
        let flat: Vec<(usize, usize, f64)> = surface
            .iter()
            .enumerate()
            .flat_map(|(c, cell)| cell.errors.iter().enumerate().map(move |(l, &e)| (c, l, e)))
            .collect();
        let errors: Vec<f64> = flat.iter().map(|t| t.2).collect();
        let k = argmin_with_tie_break(&errors, tie_break);
        (flat[k].0, flat[k].1)
    }
}

/// A tuned model with its report.
#[derive(Debug, Clone)]
pub struct Tuned {
    pub report: TuningReport,
    pub model: FarModel,
}

struct CellResult {
    cell: SurfaceCell,
    chosen: usize,
    model: FarModel,
    fold_errors: Option<Vec<Vec<f64>>>,
}

#[allow(clippy::too_many_arguments)]
fn fit_cell(
    train: &FunctionalDataset,
    q: usize,
    d: Option<usize>,
    method: &Method,
    rule: &TuningRule,
    lambda_rule: &LambdaRule<'_>,
    train_scores: &[ScoreMatrix],
    info: BasisInfo,
) -> Result<CellResult> {
    match method {
        Method::Linear(settings) => {
            let designs: Vec<DMatrix<f64>> = train_scores.iter().map(|s| s.scores.clone()).collect();
            let target = match lambda_rule {
                LambdaRule::Validation { scores, response } => SelectionTarget::Validation {
                    designs: scores.iter().map(|s| s.scores.clone()).collect(),
                    response,
                },
                LambdaRule::KFold { k, seed } => SelectionTarget::KFold { k: *k, seed: *seed },
                LambdaRule::Fixed(l) => SelectionTarget::Fixed(*l),
            };
            let sel = select_lambda(
                &designs,
                train.response(),
                train.response_mean(),
                settings.family,
                settings.grid_size,
                &settings.solver,
                &target,
                rule.tie_break,
            )?;
            let mut model = sel.model;
            model.basis = Some(info);
            Ok(CellResult {
                cell: SurfaceCell {
                    q,
                    d: None,
                    lambdas: sel.lambdas,
                    errors: sel.errors,
                },
                chosen: sel.chosen,
                model: FarModel::Linear(model),
                fold_errors: sel.fold_errors,
            })
        }
        Method::Nonlinear(settings) => {
            let mut options = settings.options;
            options.link_dim = d.expect("nonlinear cells carry a link dimension");
            options.tie_break = rule.tie_break;
            let fit = fit_nonlinear(
                train_scores,
                train.response(),
                train.response_mean(),
                settings.family,
                lambda_rule,
                &options,
            )?;
            let mut model = fit.model;
            model.basis = Some(info);
            if settings.threshold {
                model = threshold_model(&model, model.lambda);
            }
            Ok(CellResult {
                cell: SurfaceCell {
                    q,
                    d,
                    lambdas: fit.selection.lambdas,
                    errors: fit.selection.errors,
                },
                chosen: fit.selection.chosen,
                model: FarModel::Nonlinear(model),
                fold_errors: fit.selection.fold_errors,
            })
        }
    }
}

fn tune_with(
    train: &FunctionalDataset,
    valid: Option<&FunctionalDataset>,
    method: &Method,
    rule: &TuningRule,
) -> Result<Tuned> {
    rule.check(method)?;
    let d_list: Vec<Option<usize>> = match method {
        Method::Linear(_) => vec![None],
        Method::Nonlinear(_) => rule.d_candidates.iter().map(|&d| Some(d)).collect(),
    };
    let valid_raw = valid.map(FunctionalDataset::raw_response);
    let mut surface = Vec::new();
    let mut best: Option<(CellResult, f64)> = None;
    for &q in &rule.q_candidates {
        let basis = make_basis(rule.basis_kind, q, train.grid())?;
        let train_scores = project_all(train.curves(), &basis)?;
        let valid_scores = match valid {
            Some(v) => Some(project_all(v.curves(), &basis)?),
            None => None,
        };
        for &d in &d_list {
            let lambda_rule = match (&valid_scores, &valid_raw, rule.mode) {
                (Some(vs), Some(vr), _) => LambdaRule::Validation {
                    scores: vs,
                    response: vr,
                },
                (_, _, TuningMode::KFoldCv { k }) => LambdaRule::KFold { k, seed: rule.seed },
                _ => {
                    return Err(FarError::InvalidTuning(
                        "validation tuning needs a validation set".into(),
                    ))
                }
            };
            let result = fit_cell(
                train,
                q,
                d,
                method,
                rule,
                &lambda_rule,
                &train_scores,
                BasisInfo::new(&basis),
            )?;
            let err = result.cell.errors[result.chosen];
            surface.push(result.cell.clone());
            let replace = match &best {
                None => true,
                Some((_, b)) => match rule.tie_break {
                    TieBreak::Sparsest => err < *b,
                    TieBreak::Densest => err <= *b,
                },
            };
            if replace {
                best = Some((result, err));
            }
        }
    }
    let (best, error) = best.expect("candidate lists are nonempty");
    let report = TuningReport {
        mode: rule.mode,
        lambda: best.cell.lambdas[best.chosen],
        q: best.cell.q,
        d: best.cell.d,
        error,
        surface,
        fold_errors: best.fold_errors,
    };
    Ok(Tuned {
        report,
        model: best.model,
    })
}

/// Fits on `train` for every candidate cell and picks the cell and level
/// with the smallest validation prediction error.
pub fn tune_validation(
    train: &FunctionalDataset,
    valid: &FunctionalDataset,
    method: &Method,
    rule: &TuningRule,
) -> Result<Tuned> {
    if !train.grid().matches(valid.grid(), 1e-12) {
        return Err(FarError::GridMismatch(
            "training and validation curves use different grids".into(),
        ));
    }
    if train.p() != valid.p() {
        return Err(FarError::DimensionMismatch(
            "training and validation sets have different predictors".into(),
        ));
    }
    tune_with(train, Some(valid), method, rule)
}

/// k-fold cross-validation over the candidate cells.
pub fn tune_cv(data: &FunctionalDataset, method: &Method, rule: &TuningRule) -> Result<Tuned> {
    let TuningMode::KFoldCv { k } = rule.mode else {
        return Err(FarError::InvalidTuning("rule is not a cross-validation rule".into()));
    };
    if k > data.n() {
        return Err(FarError::InvalidTuning(format!(
            "{k} folds requested for {} observations",
            data.n()
        )));
    }
    tune_with(data, None, method, rule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub q: usize,
    pub candidates: Vec<usize>,
    /// Mean squared reconstruction error on held-out points per candidate.
    pub errors: Vec<f64>,
    pub held_out_per_curve: usize,
}

/// Number of grid points held out of each curve.
pub fn held_out_count(grid_len: usize, fraction: f64) -> usize {
    (grid_len as f64 * fraction).round() as usize
}

/// Picks the basis dimension that best reconstructs randomly held-out time
/// points from a least-squares fit to the remaining points of each curve.
pub fn holdout_q_selection(
    curves: &CurveSet,
    fraction: f64,
    candidates: &[usize],
    kind: BasisKind,
    seed: u64,
) -> Result<HoldoutReport> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(FarError::InvalidTuning(format!(
            "held-out fraction must lie in (0, 0.5], got {fraction}"
        )));
    }
    if candidates.is_empty() {
        return Err(FarError::InvalidTuning("no basis dimension candidates".into()));
    }
    let grid = curves.grid();
    let len = grid.len();
    let held = held_out_count(len, fraction).max(1);
    let kept = len - held;
    let qmax = *candidates.iter().max().expect("nonempty");
    if kept < qmax {
        return Err(FarError::InvalidTuning(format!(
            "{kept} retained points cannot support a {qmax}-dimensional basis"
        )));
    }
    let bases = candidates
        .iter()
        .map(|&q| make_basis(kind, q, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sse = vec![0.0; candidates.len()];
    let mut count = 0usize;
    let mut energy = 0.0;
    let mut order: Vec<usize> = (0..len).collect();
    for x in curves.curves() {
        for i in 0..x.nrows() {
            order.shuffle(&mut rng);
            let (out_idx, in_idx) = order.split_at(held);
            for (c, basis) in bases.iter().enumerate() {
                let b = basis.values();
                let q = b.nrows();
                let design = DMatrix::from_fn(kept, q, |r, l| b[(l, in_idx[r])]);
                let target = DVector::from_iterator(kept, in_idx.iter().map(|&k| x[(i, k)]));
                let coef = match design.tr_mul(&design).cholesky() {
                    Some(ch) => ch.solve(&design.tr_mul(&target)),
                    None => design
                        .clone()
                        .svd(true, true)
                        .solve(&target, 1e-12)
                        .map_err(|e| FarError::InvalidInput(e.to_string()))?,
                };
                if c == 0 {
                    energy += out_idx.iter().map(|&k| x[(i, k)] * x[(i, k)]).sum::<f64>();
                }
                for &k in out_idx {
                    let fit: f64 = (0..q).map(|l| b[(l, k)] * coef[l]).sum();
                    let e = x[(i, k)] - fit;
                    sse[c] += e * e;
                }
            }
            count += held;
        }
    }
    let errors: Vec<f64> = sse.iter().map(|s| s / count.max(1) as f64).collect();
    // errors at the rounding floor count as ties and go to the first candidate
    let floor = 1e-10 * energy / count.max(1) as f64;
    let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    let best = errors
        .iter()
        .position(|&e| e <= min + floor)
        .unwrap_or_else(|| argmin_with_tie_break(&errors, TieBreak::Sparsest));
    Ok(HoldoutReport {
        q: candidates[best],
        candidates: candidates.to_vec(),
        errors,
        held_out_per_curve: held,
    })
}
