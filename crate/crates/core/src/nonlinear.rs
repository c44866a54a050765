//! Single-index functional additive regression.
//!
//! Each predictor enters through `g_j(theta_ij^T eta_j)` with a unit-norm
//! index vector `eta_j` and a cubic-spline link `g_j(u) = h(u)^T xi_j`. The
//! fit alternates between
//!
//! 1. building link designs `H_j` from the current indices,
//! 2. fitting `xi` over a penalty path with the linear block solver and
//!    picking a level with the caller's selection rule, and
//! 3. one linearized least-squares update of all active `eta_j` jointly.
//!
//! Link bases are clamped on the training index range; outside that range
//! a link is extended linearly from its boundary value and slope.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{project_all, CurveSet, ScoreMatrix};
use crate::bspline::BSplineBasis;
use crate::error::{FarError, Result};
use crate::linear::{BasisInfo, LinearFar, LinearFarModel, SolverOptions, DEFAULT_GRID_SIZE};
use crate::penalty::{PenaltyFamily, PenaltySpec};
use crate::tuning::{select_lambda, LambdaRule, PathSelection, SelectionTarget, TieBreak};

const SPLINE_DEGREE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearOptions {
    /// Link basis dimension `d` (at least 4).
    pub link_dim: usize,
    pub grid_size: usize,
    pub max_outer: usize,
    /// Relative change of `sum_j ||f_j||^2 / n` that ends the outer loop.
    pub outer_tolerance: f64,
    pub max_halvings: usize,
    /// Stop after this many outer iterations without a better selection score.
    pub patience: usize,
    pub solver: SolverOptions,
    pub tie_break: TieBreak,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self {
            link_dim: 6,
            grid_size: DEFAULT_GRID_SIZE,
            max_outer: 25,
            outer_tolerance: 1e-5,
            max_halvings: 5,
            patience: 5,
            solver: SolverOptions::default(),
            tie_break: TieBreak::Sparsest,
        }
    }
}

/// Link basis of one predictor: knots on the training index range plus the
/// training column means used to center the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBasisSpec {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub knots: Vec<f64>,
    pub column_means: Vec<f64>,
}

impl LinkBasisSpec {
    pub fn spline(&self) -> Result<BSplineBasis> {
        BSplineBasis::from_knots(self.knots.clone(), SPLINE_DEGREE)
    }
}

/// Basis row at `u`, extended linearly outside the spline support.
fn link_row(spline: &BSplineBasis, u: f64, row: &mut [f64], scratch: &mut [f64]) {
    let (lo, hi) = (spline.lower(), spline.upper());
    if u < lo || u > hi {
        let edge = if u < lo { lo } else { hi };
        spline.eval_into(edge, row);
        spline.eval_deriv_into(edge, scratch);
        let step = u - edge;
        for (r, d) in row.iter_mut().zip(scratch.iter()) {
            *r += step * d;
        }
    } else {
        spline.eval_into(u, row);
    }
}

/// `Theta eta` for each row of `scores`.
pub fn index_values(scores: &DMatrix<f64>, eta: &DVector<f64>) -> DVector<f64> {
    scores * eta
}

/// Link-basis rows for the given index values, linearly extended outside
/// the knot range.
pub fn design_from_indices(spline: &BSplineBasis, u: &DVector<f64>) -> DMatrix<f64> {
    let d = spline.dim();
    let mut h = DMatrix::zeros(u.len(), d);
    let mut row = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for (i, &ui) in u.iter().enumerate() {
        link_row(spline, ui, &mut row, &mut scratch);
        for l in 0..d {
            h[(i, l)] = row[l];
        }
    }
    h
}

/// `H_j` with row `i` equal to `h(theta_i^T eta)^T`, knots uniform on the
/// observed index range.
pub fn build_link_design(
    scores: &DMatrix<f64>,
    eta: &DVector<f64>,
    d: usize,
) -> Result<(DMatrix<f64>, BSplineBasis)> {
    if d < SPLINE_DEGREE + 1 {
        return Err(FarError::InvalidDimension {
            dim: d,
            reason: "cubic link basis needs at least 4 functions".into(),
        });
    }
    if scores.ncols() != eta.len() {
        return Err(FarError::DimensionMismatch(format!(
            "index vector has length {}, scores have {} columns",
            eta.len(),
            scores.ncols()
        )));
    }
    if (eta.norm() - 1.0).abs() > 1e-8 {
        return Err(FarError::InvalidInput(format!(
            "index vector must have unit norm, got {}",
            eta.norm()
        )));
    }
    let u = index_values(scores, eta);
    let lower = u.min();
    let upper = u.max();
    if !(upper - lower > 1e-12 * (1.0 + upper.abs().max(lower.abs()))) {
        return Err(FarError::DegenerateIndex { lower, upper });
    }
    let spline = BSplineBasis::uniform(lower, upper, d, SPLINE_DEGREE)?;
    Ok((design_from_indices(&spline, &u), spline))
}

/// Flips `eta` so its first nonzero entry is positive.
pub fn apply_sign_convention(eta: &mut DVector<f64>) {
    if let Some(first) = eta.iter().find(|v| **v != 0.0) {
        if *first < 0.0 {
            eta.neg_mut();
        }
    }
}

fn unit_with_sign(mut v: DVector<f64>) -> Option<DVector<f64>> {
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    v /= norm;
    apply_sign_convention(&mut v);
    Some(v)
}

/// Leading eigenvector of `Theta^T Theta / n` for centered scores.
pub fn leading_loading(centered: &DMatrix<f64>) -> DVector<f64> {
    let n = centered.nrows().max(1) as f64;
    let cov = centered.tr_mul(centered) / n;
    let eig = SymmetricEigen::new(cov);
    let (mut best, mut best_val) = (0, f64::NEG_INFINITY);
    for (k, &v) in eig.eigenvalues.iter().enumerate() {
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    let q = centered.ncols();
    unit_with_sign(eig.eigenvectors.column(best).into_owned()).unwrap_or_else(|| {
        let mut e = DVector::zeros(q);
        e[0] = 1.0;
        e
    })
}

fn center_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let means = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()));
    let mut out = m.clone();
    for (mut c, mu) in out.column_iter_mut().zip(means.iter()) {
        c.add_scalar_mut(-mu);
    }
    (out, means)
}

fn subtract_means(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut c, mu) in out.column_iter_mut().zip(means.iter()) {
        c.add_scalar_mut(-mu);
    }
    out
}

/// Initial index vectors from a selected linear fit; predictors the linear
/// fit drops get the leading principal-component loading of their scores.
pub fn init_eta(
    scores: &[ScoreMatrix],
    y: &DVector<f64>,
    response_mean: f64,
    family: PenaltyFamily,
    rule: &LambdaRule<'_>,
    options: &NonlinearOptions,
) -> Result<Vec<DVector<f64>>> {
    let designs: Vec<DMatrix<f64>> = scores.iter().map(|s| s.scores.clone()).collect();
    let target = match rule {
        LambdaRule::Validation { scores: vs, response } => SelectionTarget::Validation {
            designs: vs.iter().map(|s| s.scores.clone()).collect(),
            response,
        },
        LambdaRule::KFold { k, seed } => SelectionTarget::KFold { k: *k, seed: *seed },
        LambdaRule::Fixed(l) => SelectionTarget::Fixed(*l),
    };
    let selection = select_lambda(
        &designs,
        y,
        response_mean,
        family,
        options.grid_size,
        &options.solver,
        &target,
        options.tie_break,
    )?;
    Ok(init_from_linear(scores, &selection.model))
}

/// Normalized linear coefficients, or the PCA loading for zero fits.
pub fn init_from_linear(scores: &[ScoreMatrix], linear: &LinearFarModel) -> Vec<DVector<f64>> {
    scores
        .iter()
        .zip(&linear.etas)
        .map(|(s, eta)| {
            unit_with_sign(DVector::from_column_slice(eta))
                .unwrap_or_else(|| leading_loading(&center_columns(&s.scores).0))
        })
        .collect()
}

/// Single-level link fit on fixed designs.
pub fn fit_xi_step(designs: &[DMatrix<f64>], y: &DVector<f64>, penalty: &PenaltySpec) -> Result<LinearFarModel> {
    LinearFar::new(designs, y, 0.0)?.fit(penalty, None)
}

/// State of one predictor's link for the index update.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub spline: BSplineBasis,
    pub column_means: DVector<f64>,
    pub xi: DVector<f64>,
}

/// `sum_i (y_i - sum_j (h(theta_ij^T eta_j) - m_j)^T xi_j)^2` with links held
/// fixed. Predictors without a link contribute nothing.
pub fn eta_objective(
    centered_scores: &[DMatrix<f64>],
    etas: &[DVector<f64>],
    links: &[Option<LinkState>],
    y: &DVector<f64>,
) -> f64 {
    let mut resid = y.clone();
    for (j, link) in links.iter().enumerate() {
        if let Some(link) = link {
            let u = index_values(&centered_scores[j], &etas[j]);
            let h = design_from_indices(&link.spline, &u);
            let f = subtract_means(&h, &link.column_means) * &link.xi;
            resid -= f;
        }
    }
    resid.norm_squared()
}

/// Gradient of [`eta_objective`] with respect to each active `eta_j`,
/// `-2 Z_j^T R`, stacked over active predictors.
pub fn eta_gradient(
    centered_scores: &[DMatrix<f64>],
    etas: &[DVector<f64>],
    links: &[Option<LinkState>],
    y: &DVector<f64>,
) -> Vec<Option<DVector<f64>>> {
    let (z, r, offsets) = linearization(centered_scores, etas, links, y);
    let g = z.tr_mul(&r) * -2.0;
    offsets
        .iter()
        .map(|o| o.map(|(start, len)| g.rows(start, len).into_owned()))
        .collect()
}

type Offsets = Vec<Option<(usize, usize)>>;

/// Stacked derivative design `Z` (row i, block j = g_j'(u_ij) theta_ij^T),
/// current residuals, and the column block of each active predictor.
fn linearization(
    centered_scores: &[DMatrix<f64>],
    etas: &[DVector<f64>],
    links: &[Option<LinkState>],
    y: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>, Offsets) {
    let n = y.len();
    let mut offsets = Vec::with_capacity(links.len());
    let mut total = 0;
    for (j, link) in links.iter().enumerate() {
        match link {
            Some(l) if l.xi.iter().any(|&v| v != 0.0) => {
                let q = centered_scores[j].ncols();
                offsets.push(Some((total, q)));
                total += q;
            }
            _ => offsets.push(None),
        }
    }
    let mut z = DMatrix::zeros(n, total);
    let mut resid = y.clone();
    for (j, link) in links.iter().enumerate() {
        let Some(link) = link else { continue };
        let d = link.spline.dim();
        let u = index_values(&centered_scores[j], &etas[j]);
        let mut row = vec![0.0; d];
        let mut deriv = vec![0.0; d];
        for i in 0..n {
            link_row(&link.spline, u[i], &mut row, &mut deriv);
            let value: f64 = (0..d).map(|l| (row[l] - link.column_means[l]) * link.xi[l]).sum();
            resid[i] -= value;
            if let Some((start, q)) = offsets[j] {
                // the linear extension has the boundary slope outside the support
                link.spline.eval_deriv_into(u[i], &mut deriv);
                let slope: f64 = (0..d).map(|l| deriv[l] * link.xi[l]).sum();
                for l in 0..q {
                    z[(i, start + l)] = slope * centered_scores[j][(i, l)];
                }
            }
        }
    }
    (z, resid, offsets)
}

#[derive(Debug, Clone)]
pub struct EtaUpdate {
    /// Unit-norm, sign-normalized index vectors.
    pub etas: Vec<DVector<f64>>,
    /// Accepted `eta_old + step * delta` before normalization.
    pub candidates: Vec<DVector<f64>>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub step: f64,
    pub halvings: usize,
    pub accepted: bool,
    pub ridge_used: bool,
}

/// Solves the first-order least-squares problem for the increments of all
/// active index vectors jointly, halving the step while the exact objective
/// increases.
pub fn update_eta_step(
    centered_scores: &[DMatrix<f64>],
    etas_old: &[DVector<f64>],
    links: &[Option<LinkState>],
    y: &DVector<f64>,
    max_halvings: usize,
) -> Result<EtaUpdate> {
    let (z, resid, offsets) = linearization(centered_scores, etas_old, links, y);
    let objective_before = resid.norm_squared();
    let unchanged = |ridge_used| EtaUpdate {
        etas: etas_old.to_vec(),
        candidates: etas_old.to_vec(),
        objective_before,
        objective_after: objective_before,
        step: 0.0,
        halvings: 0,
        accepted: false,
        ridge_used,
    };
    if z.ncols() == 0 {
        return Ok(unchanged(false));
    }
    let gram = z.tr_mul(&z);
    let rhs = z.tr_mul(&resid);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(unchanged(false));
    }
    let (delta, ridge_used) = match gram.clone().cholesky() {
        Some(ch) => (ch.solve(&rhs), false),
        None => {
            let k = gram.nrows();
            let ridged = gram + DMatrix::identity(k, k) * 1e-8;
            match ridged.clone().cholesky() {
                Some(ch) => (ch.solve(&rhs), true),
                None => {
                    let svd = ridged.svd(true, true);
                    let sol = svd
                        .solve(&rhs, 1e-12)
                        .map_err(|e| FarError::InvalidInput(format!("index update: {e}")))?;
                    (sol, true)
                }
            }
        }
    };
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(FarError::NonFinite("index increment".into()));
    }

    let mut step = 1.0;
    for halvings in 0..=max_halvings {
        let candidates: Vec<DVector<f64>> = etas_old
            .iter()
            .zip(&offsets)
            .map(|(eta, off)| match off {
                Some((start, len)) => eta + delta.rows(*start, *len) * step,
                None => eta.clone(),
            })
            .collect();
        let after = eta_objective(centered_scores, &candidates, links, y);
        if after <= objective_before {
            let etas = candidates
                .iter()
                .zip(etas_old)
                .zip(&offsets)
                .map(|((c, old), off)| match off {
                    Some(_) => unit_with_sign(c.clone()).unwrap_or_else(|| old.clone()),
                    None => old.clone(),
                })
                .collect();
            return Ok(EtaUpdate {
                etas,
                candidates,
                objective_before,
                objective_after: after,
                step,
                halvings,
                accepted: true,
                ridge_used,
            });
        }
        step *= 0.5;
    }
    Ok(unchanged(ridge_used))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearFarModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisInfo>,
    pub link_dim: usize,
    /// Unit-norm index vectors (length q).
    pub etas: Vec<Vec<f64>>,
    /// Link coefficients (length d, zero when inactive).
    pub xis: Vec<Vec<f64>>,
    /// Link basis per predictor; `None` when the index range was degenerate.
    pub links: Vec<Option<LinkBasisSpec>>,
    pub score_means: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<f64>>,
    pub response_mean: f64,
    pub lambda: f64,
    pub penalty: PenaltySpec,
    pub active_set: Vec<usize>,
    pub outer_iterations: usize,
    pub converged: bool,
}

impl NonlinearFarModel {
    pub fn p(&self) -> usize {
        self.etas.len()
    }

    pub fn block_norms(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.len().max(1) as f64;
                (b.iter().map(|v| v * v).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    pub fn fitted_values(&self) -> Vec<f64> {
        let n = self.blocks.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| self.response_mean + self.blocks.iter().map(|b| b[i]).sum::<f64>())
            .collect()
    }

    /// Link contribution `g_j(u)` (centered) at index values `u`.
    pub fn link_values(&self, j: usize, u: &[f64]) -> Result<Vec<f64>> {
        let Some(spec) = self.links.get(j).and_then(Option::as_ref) else {
            return Ok(vec![0.0; u.len()]);
        };
        let spline = spec.spline()?;
        let d = spline.dim();
        let mut row = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        Ok(u.iter()
            .map(|&ui| {
                link_row(&spline, ui, &mut row, &mut scratch);
                (0..d)
                    .map(|l| (row[l] - spec.column_means[l]) * self.xis[j][l])
                    .sum()
            })
            .collect())
    }

    pub fn predict_scores(&self, scores: &[ScoreMatrix]) -> Result<DVector<f64>> {
        if scores.len() != self.p() {
            return Err(FarError::DimensionMismatch(format!(
                "model has {} predictors, got {}",
                self.p(),
                scores.len()
            )));
        }
        let m = scores.first().map_or(0, ScoreMatrix::n);
        let mut out = DVector::from_element(m, self.response_mean);
        for &j in &self.active_set {
            let s = &scores[j];
            if s.q() != self.etas[j].len() || s.n() != m {
                return Err(FarError::DimensionMismatch(format!(
                    "score matrix {j} has the wrong shape"
                )));
            }
            let u: Vec<f64> = (0..m)
                .map(|i| {
                    (0..s.q())
                        .map(|l| (s.scores[(i, l)] - self.score_means[j][l]) * self.etas[j][l])
                        .sum()
                })
                .collect();
            for (o, v) in out.iter_mut().zip(self.link_values(j, &u)?) {
                *o += v;
            }
        }
        Ok(out)
    }

    pub fn predict(&self, curves: &CurveSet) -> Result<DVector<f64>> {
        let info = self.basis.as_ref().ok_or_else(|| {
            FarError::InvalidInput("model carries no basis; predict from scores instead".into())
        })?;
        let basis = info.rebuild_for(curves)?;
        self.predict_scores(&project_all(curves, &basis)?)
    }
}

/// Zeroes every block with `||f_j|| / sqrt(n) <= lambda`.
pub fn threshold_model(model: &NonlinearFarModel, lambda: f64) -> NonlinearFarModel {
    let mut out = model.clone();
    let norms = model.block_norms();
    for (j, &norm) in norms.iter().enumerate() {
        if norm <= lambda {
            out.blocks[j].iter_mut().for_each(|v| *v = 0.0);
            out.xis[j].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out.active_set.retain(|&j| norms[j] > lambda);
    out
}

/// Result of [`fit_nonlinear`], including the selection curve of the
/// returned iterate.
#[derive(Debug, Clone)]
pub struct NonlinearFit {
    pub model: NonlinearFarModel,
    pub selection: PathSelection,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Selection error at the chosen level, per outer iteration.
    pub history: Vec<f64>,
}

struct Iterate {
    etas: Vec<DVector<f64>>,
    links: Vec<Option<LinkBasisSpec>>,
    selection: PathSelection,
    score: f64,
    iteration: usize,
}

/// Alternating link/index fit. `scores` are raw training score matrices,
/// `y` the centered response.
pub fn fit_nonlinear(
    scores: &[ScoreMatrix],
    y: &DVector<f64>,
    response_mean: f64,
    family: PenaltyFamily,
    rule: &LambdaRule<'_>,
    options: &NonlinearOptions,
) -> Result<NonlinearFit> {
    if scores.is_empty() {
        return Err(FarError::InvalidInput("no predictors".into()));
    }
    if options.link_dim < SPLINE_DEGREE + 1 {
        return Err(FarError::InvalidDimension {
            dim: options.link_dim,
            reason: "cubic link basis needs at least 4 functions".into(),
        });
    }
    let n = y.len();
    let d = options.link_dim;
    let mut centered = Vec::with_capacity(scores.len());
    let mut score_means = Vec::with_capacity(scores.len());
    for s in scores {
        if s.n() != n {
            return Err(FarError::DimensionMismatch(
                "every score matrix must have one row per response".into(),
            ));
        }
        let (c, m) = center_columns(&s.scores);
        centered.push(c);
        score_means.push(m);
    }
    let valid_centered: Option<Vec<DMatrix<f64>>> = match rule {
        LambdaRule::Validation { scores: vs, .. } => {
            if vs.len() != scores.len() {
                return Err(FarError::DimensionMismatch(
                    "validation set has a different number of predictors".into(),
                ));
            }
            Some(
                vs.iter()
                    .zip(&score_means)
                    .map(|(s, m)| subtract_means(&s.scores, m))
                    .collect(),
            )
        }
        _ => None,
    };

    let mut etas = init_eta(scores, y, response_mean, family, rule, options)?;
    let mut best: Option<Iterate> = None;
    let mut history = Vec::new();
    let mut previous_blocks: Option<Vec<DVector<f64>>> = None;
    let mut converged = false;
    let mut last_iteration = 0;

    for iteration in 1..=options.max_outer {
        last_iteration = iteration;
        let mut designs = Vec::with_capacity(scores.len());
        let mut splines = Vec::with_capacity(scores.len());
        for (c, eta) in centered.iter().zip(&etas) {
            match build_link_design(c, eta, d) {
                Ok((h, spline)) => {
                    designs.push(h);
                    splines.push(Some(spline));
                }
                Err(FarError::DegenerateIndex { .. }) => {
                    designs.push(DMatrix::zeros(n, d));
                    splines.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        let target = match (rule, &valid_centered) {
            (LambdaRule::Validation { response, .. }, Some(vc)) => SelectionTarget::Validation {
                designs: vc
                    .iter()
                    .zip(&etas)
                    .zip(&splines)
                    .map(|((c, eta), spline)| match spline {
                        Some(sp) => design_from_indices(sp, &index_values(c, eta)),
                        None => DMatrix::zeros(c.nrows(), d),
                    })
                    .collect(),
                response,
            },
            (LambdaRule::KFold { k, seed }, _) => SelectionTarget::KFold { k: *k, seed: *seed },
            (LambdaRule::Fixed(l), _) => SelectionTarget::Fixed(*l),
            _ => unreachable!("validation designs exist for validation rules"),
        };
        let selection = select_lambda(
            &designs,
            y,
            response_mean,
            family,
            options.grid_size,
            &options.solver,
            &target,
            options.tie_break,
        )?;
        let xi_model = &selection.model;
        let blocks = xi_model.block_vectors();
        let score = match target {
            SelectionTarget::Fixed(_) => xi_model.objective,
            _ => selection.errors[selection.chosen],
        };
        history.push(score);

        let links: Vec<Option<LinkBasisSpec>> = splines
            .iter()
            .zip(&xi_model.score_means)
            .map(|(sp, means)| {
                sp.as_ref().map(|sp| LinkBasisSpec {
                    dim: d,
                    lower: sp.lower(),
                    upper: sp.upper(),
                    knots: sp.knots().to_vec(),
                    column_means: means.clone(),
                })
            })
            .collect();
        let improved = best.as_ref().is_none_or(|b| score < b.score);
        if improved {
            best = Some(Iterate {
                etas: etas.clone(),
                links,
                selection: selection.clone(),
                score,
                iteration,
            });
        }

        let change = previous_blocks.as_ref().map(|prev| {
            let num: f64 = prev.iter().zip(&blocks).map(|(a, b)| (a - b).norm_squared()).sum();
            let den: f64 = prev.iter().map(|a| a.norm_squared()).sum();
            if den > 0.0 {
                num / den
            } else if num == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        });
        if change.is_some_and(|c| c <= options.outer_tolerance) {
            converged = true;
            break;
        }
        let best_iteration = best.as_ref().map_or(iteration, |b| b.iteration);
        if iteration - best_iteration >= options.patience.max(1) {
            break;
        }
        previous_blocks = Some(blocks);
        if iteration == options.max_outer {
            break;
        }

        let link_states: Vec<Option<LinkState>> = splines
            .into_iter()
            .zip(&xi_model.etas)
            .zip(&xi_model.score_means)
            .map(|((sp, xi), means)| {
                sp.map(|spline| LinkState {
                    spline,
                    column_means: DVector::from_column_slice(means),
                    xi: DVector::from_column_slice(xi),
                })
            })
            .collect();
        let update = update_eta_step(&centered, &etas, &link_states, y, options.max_halvings)?;
        etas = update.etas;
    }

    let best = best.expect("at least one outer iteration runs");
    let xi_model = &best.selection.model;
    let model = NonlinearFarModel {
        basis: None,
        link_dim: d,
        etas: best.etas.iter().map(|e| e.as_slice().to_vec()).collect(),
        xis: xi_model.etas.clone(),
        links: best.links,
        score_means: score_means.iter().map(|m| m.as_slice().to_vec()).collect(),
        blocks: xi_model.blocks.clone(),
        response_mean,
        lambda: xi_model.lambda,
        penalty: xi_model.penalty,
        active_set: xi_model.active_set.clone(),
        outer_iterations: best.iteration,
        converged,
    };
    Ok(NonlinearFit {
        model,
        selection: best.selection,
        outer_iterations: last_iteration,
        converged,
        history,
    })
}
