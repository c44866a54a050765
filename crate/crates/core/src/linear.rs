//! Linear functional additive regression by block coordinate descent.
//!
//! Each predictor contributes a fitted block `f_j = Theta_j eta_j` (n-vector).
//! A block update projects the partial residual onto the column space of
//! `Theta_j` and applies group soft-thresholding to the projection; concave
//! penalties replace the threshold by `rho'(||f_j|| / sqrt(n))` evaluated at
//! the latest block estimate (local linear approximation).
//!
//! The solver only touches the designs through [`BlockFactor`], so the same
//! engine fits link-basis designs in the single-index model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{make_basis, project_all, BasisSpec, BasisSystem, CurveSet, FunctionalDataset, ScoreMatrix};
use crate::error::{FarError, Result};
use crate::penalty::{PenaltyFamily, PenaltySpec};

/// Relative singular-value cutoff for the column space of a design.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Converged when `max_j ||f_j_new - f_j_old|| / sqrt(n)` falls below this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Record the objective after every sweep.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_sweeps: 1000,
            record_trace: false,
        }
    }
}

/// Orthonormal basis for the column space of a column-centered design,
/// plus the map from block coordinates back to design coefficients.
#[derive(Debug, Clone)]
pub struct BlockFactor {
    /// n x r, orthonormal columns with zero mean.
    basis: DMatrix<f64>,
    /// q x r, `V_r diag(1/s_r)`; takes `U_r^T f` to the min-norm coefficients.
    coef_map: DMatrix<f64>,
    column_means: DVector<f64>,
}

impl BlockFactor {
    /// Centers the columns of `design` (n x q) and factors it with a thin SVD.
    pub fn new(design: &DMatrix<f64>) -> Result<Self> {
        let (n, q) = design.shape();
        if n == 0 || q == 0 {
            return Err(FarError::DimensionMismatch("empty design".into()));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(FarError::NonFinite("design matrix".into()));
        }
        let column_means = DVector::from_iterator(q, design.column_iter().map(|c| c.mean()));
        let mut centered = design.clone();
        for (mut col, m) in centered.column_iter_mut().zip(column_means.iter()) {
            col.add_scalar_mut(-m);
        }
        let svd = centered.svd(true, true);
        let u = svd.u.expect("svd computed with u");
        let v_t = svd.v_t.expect("svd computed with v");
        let s = &svd.singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..s.len())
            .filter(|&k| smax > 0.0 && s[k] > RANK_TOLERANCE * smax)
            .collect();
        let r = keep.len();
        let mut basis = DMatrix::zeros(n, r);
        let mut coef_map = DMatrix::zeros(q, r);
        for (c, &k) in keep.iter().enumerate() {
            basis.set_column(c, &u.column(k));
            for l in 0..q {
                coef_map[(l, c)] = v_t[(k, l)] / s[k];
            }
        }
        Ok(Self {
            basis,
            coef_map,
            column_means,
        })
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn q(&self) -> usize {
        self.coef_map.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    /// `S_j v`, the projection onto the centered column space.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(v)
    }

    /// Design coefficients reproducing a block that lies in the column space.
    pub fn coefficients(&self, block: &DVector<f64>) -> DVector<f64> {
        &self.coef_map * self.basis.tr_mul(block)
    }
}

fn center_in_place(v: &mut DVector<f64>) {
    let m = v.mean();
    v.add_scalar_mut(-m);
}

/// One group shrinkage step: `f = (1 - c sqrt(n) / ||S R||)_+ S R`, centered.
pub fn block_update(factor: &BlockFactor, residual: &DVector<f64>, shrink: f64) -> DVector<f64> {
    let n = factor.n();
    let coords = factor.basis.tr_mul(residual);
    let norm = coords.norm();
    let threshold = shrink * (n as f64).sqrt();
    // the relative guard keeps lambda = ||S R|| / sqrt(n) exactly at the boundary
    if norm == 0.0 || threshold >= norm * (1.0 - 4.0 * f64::EPSILON) || factor.rank() == 0 {
        return DVector::zeros(n);
    }
    let alpha = 1.0 - threshold / norm;
    let mut block = &factor.basis * (coords * alpha);
    center_in_place(&mut block);
    block
}

fn materialize(factors: &[BlockFactor], coords: &[DVector<f64>]) -> Vec<DVector<f64>> {
    factors
        .iter()
        .zip(coords)
        .map(|(f, c)| {
            if c.iter().all(|&v| v == 0.0) {
                return DVector::zeros(f.n());
            }
            let mut b = &f.basis * c;
            center_in_place(&mut b);
            b
        })
        .collect()
}

/// Raw output of the block solver.
#[derive(Debug, Clone)]
pub struct BlockFit {
    pub blocks: Vec<DVector<f64>>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// `(1/2n) ||y - sum f_j||^2 + sum_j rho(||f_j|| / sqrt(n))`.
pub fn objective(y: &DVector<f64>, blocks: &[DVector<f64>], penalty: &PenaltySpec) -> Result<f64> {
    let n = y.len() as f64;
    let mut resid = y.clone();
    let mut pen = 0.0;
    for b in blocks {
        resid -= b;
        pen += penalty.rho(b.norm() / n.sqrt())?;
    }
    Ok(resid.norm_squared() / (2.0 * n) + pen)
}

fn check_response(y: &DVector<f64>) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FarError::NonFinite("response".into()));
    }
    let scale = 1.0 + y.amax();
    if !y.is_empty() && y.mean().abs() > 1e-8 * scale {
        return Err(FarError::InvalidInput(format!(
            "response must be centered (mean {})",
            y.mean()
        )));
    }
    Ok(())
}

/// Cyclic block coordinate descent for one penalty level.
///
/// Sweeps alternate between all blocks and the current active set; a fit is
/// only declared converged after a full sweep moves no block by more than the
/// tolerance.
pub fn fit_blocks(
    factors: &[BlockFactor],
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    warm: Option<&[DVector<f64>]>,
    options: &SolverOptions,
) -> Result<BlockFit> {
    let n = y.len();
    let sqrt_n = (n as f64).sqrt();
    if factors.iter().any(|f| f.n() != n) {
        return Err(FarError::DimensionMismatch(
            "every design must have one row per response".into(),
        ));
    }
    check_response(y)?;
    let blocks: Vec<DVector<f64>> = match warm {
        Some(w) if w.len() == factors.len() => w.to_vec(),
        Some(_) => {
            return Err(FarError::DimensionMismatch(
                "warm start has the wrong number of blocks".into(),
            ))
        }
        None => vec![DVector::zeros(n); factors.len()],
    };
    // Blocks live in the orthonormal coordinates of their column space, so
    // `U^T (R + f_j) = U^T R + c_j` and a visit costs two thin products.
    let mut coords: Vec<DVector<f64>> = factors
        .iter()
        .zip(&blocks)
        .map(|(f, b)| f.basis.tr_mul(b))
        .collect();
    let mut resid = y.clone();
    for (f, c) in factors.iter().zip(&coords) {
        resid.gemv(-1.0, &f.basis, c, 1.0);
    }
    let mut work: Vec<DVector<f64>> = factors.iter().map(|f| DVector::zeros(f.rank())).collect();

    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    let mut full_sweep = true;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        if full_sweep {
            // refresh to keep rounding drift out of the running residual
            resid.copy_from(y);
            for (f, c) in factors.iter().zip(&coords) {
                resid.gemv(-1.0, &f.basis, c, 1.0);
            }
        }
        let mut max_change: f64 = 0.0;
        for (j, factor) in factors.iter().enumerate() {
            if factor.rank() == 0 {
                continue;
            }
            let current = &coords[j];
            let current_norm = current.norm();
            if !full_sweep && current_norm == 0.0 {
                continue;
            }
            let shrink = match penalty.family {
                PenaltyFamily::Lasso => penalty.lambda,
                PenaltyFamily::Scad { .. } => penalty.rho_prime(current_norm / sqrt_n)?,
            };
            let z = &mut work[j];
            z.gemv_tr(1.0, &factor.basis, &resid, 0.0);
            *z += current;
            let norm = z.norm();
            let threshold = shrink * sqrt_n;
            let alpha = if norm == 0.0 || threshold >= norm * (1.0 - 4.0 * f64::EPSILON) {
                0.0
            } else {
                1.0 - threshold / norm
            };
            *z *= alpha;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(FarError::NonFinite(format!("block {j} update")));
            }
            // z now holds the new coordinates; reuse it for the increment
            let new = z.clone_owned();
            *z -= current;
            let change = z.norm() / sqrt_n;
            if change > 0.0 {
                resid.gemv(-1.0, &factor.basis, z, 1.0);
            }
            max_change = max_change.max(change);
            coords[j] = new;
        }
        if options.record_trace {
            trace.push(objective(y, &materialize(factors, &coords), penalty)?);
        }
        if max_change <= options.tolerance {
            if full_sweep {
                converged = true;
                break;
            }
            full_sweep = true;
        } else {
            full_sweep = false;
        }
    }
    let blocks = materialize(factors, &coords);
    let objective = objective(y, &blocks, penalty)?;
    Ok(BlockFit {
        blocks,
        objective,
        sweeps,
        converged,
        trace,
    })
}

/// Basis and grid a model was fitted on; needed to predict from raw curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisInfo {
    pub spec: BasisSpec,
    pub grid: Vec<f64>,
}

impl BasisInfo {
    pub fn new(basis: &BasisSystem) -> Self {
        Self {
            spec: basis.spec(),
            grid: basis.grid().points().to_vec(),
        }
    }

    /// Rebuilds the basis on the grid of `curves`, rejecting other grids.
    pub fn rebuild_for(&self, curves: &CurveSet) -> Result<BasisSystem> {
        let grid = curves.grid();
        let same = grid.len() == self.grid.len()
            && grid
                .points()
                .iter()
                .zip(&self.grid)
                .all(|(a, b)| (a - b).abs() <= 1e-12);
        if !same {
            return Err(FarError::GridMismatch(
                "curves are not on the grid the model was fitted on".into(),
            ));
        }
        make_basis(self.spec.kind, self.spec.dim, grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFarModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisInfo>,
    /// Per-predictor coefficient vectors (length q, zero when inactive).
    pub etas: Vec<Vec<f64>>,
    /// Training column means of each score matrix.
    pub score_means: Vec<Vec<f64>>,
    /// Fitted training blocks (length n each).
    pub blocks: Vec<Vec<f64>>,
    pub response_mean: f64,
    pub lambda: f64,
    pub penalty: PenaltySpec,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl LinearFarModel {
    pub fn p(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_set.is_empty()
    }

    pub fn block_vectors(&self) -> Vec<DVector<f64>> {
        self.blocks.iter().map(|b| DVector::from_column_slice(b)).collect()
    }

    /// Training fitted values `response_mean + sum_j f_j`.
    pub fn fitted_values(&self) -> Vec<f64> {
        let n = self.blocks.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| self.response_mean + self.blocks.iter().map(|b| b[i]).sum::<f64>())
            .collect()
    }

    /// Predictions `response_mean + sum_j (theta_ij - mean_j)^T eta_j`.
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
        for (j, s) in scores.iter().enumerate() {
            if s.q() != self.etas[j].len() || s.n() != m {
                return Err(FarError::DimensionMismatch(format!(
                    "score matrix {j} is {}x{}, expected {m}x{}",
                    s.n(),
                    s.q(),
                    self.etas[j].len()
                )));
            }
            if !self.active_set.contains(&j) {
                continue;
            }
            for i in 0..m {
                let v: f64 = (0..s.q())
                    .map(|l| (s.scores[(i, l)] - self.score_means[j][l]) * self.etas[j][l])
                    .sum();
                out[i] += v;
            }
        }
        Ok(out)
    }

    /// Predictions for raw curves on the training grid.
    pub fn predict(&self, curves: &CurveSet) -> Result<DVector<f64>> {
        let info = self.basis.as_ref().ok_or_else(|| {
            FarError::InvalidInput("model carries no basis; predict from scores instead".into())
        })?;
        let basis = info.rebuild_for(curves)?;
        self.predict_scores(&project_all(curves, &basis)?)
    }
}

/// Ordered fits over a decreasing penalty grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitPath {
    pub lambdas: Vec<f64>,
    pub models: Vec<LinearFarModel>,
}

impl FitPath {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn sweeps(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.sweeps).collect()
    }

    pub fn converged(&self) -> Vec<bool> {
        self.models.iter().map(|m| m.converged).collect()
    }
}

/// `n_points` log-spaced values from `lambda_max` down to
/// `lambda_max * min_ratio`.
pub fn log_grid(lambda_max: f64, n_points: usize, min_ratio: f64) -> Vec<f64> {
    if n_points == 1 {
        return vec![lambda_max];
    }
    let lo = min_ratio.ln();
    (0..n_points)
        .map(|k| lambda_max * (lo * k as f64 / (n_points - 1) as f64).exp())
        .collect()
}

/// Default smallest-to-largest ratio of the penalty grid.
pub const DEFAULT_MIN_RATIO: f64 = 1e-3;
pub const DEFAULT_GRID_SIZE: usize = 100;

/// A fitting problem with the per-design factorizations computed once.
#[derive(Debug, Clone)]
pub struct LinearFar {
    factors: Vec<BlockFactor>,
    y: DVector<f64>,
    response_mean: f64,
    basis: Option<BasisInfo>,
    options: SolverOptions,
}

impl LinearFar {
    /// `y` must already be centered; `response_mean` is added back in
    /// predictions.
    pub fn new(designs: &[DMatrix<f64>], y: &DVector<f64>, response_mean: f64) -> Result<Self> {
        if designs.is_empty() {
            return Err(FarError::InvalidInput("no predictors".into()));
        }
        check_response(y)?;
        if designs.iter().any(|d| d.nrows() != y.len()) {
            return Err(FarError::DimensionMismatch(
                "every score matrix must have one row per response".into(),
            ));
        }
        let factors = designs.iter().map(BlockFactor::new).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            factors,
            y: y.clone(),
            response_mean,
            basis: None,
            options: SolverOptions::default(),
        })
    }

    pub fn from_scores(scores: &[ScoreMatrix], y: &DVector<f64>, response_mean: f64) -> Result<Self> {
        let designs: Vec<DMatrix<f64>> = scores.iter().map(|s| s.scores.clone()).collect();
        Self::new(&designs, y, response_mean)
    }

    /// Projects every predictor of `data` on `basis`.
    pub fn from_dataset(data: &FunctionalDataset, basis: &BasisSystem) -> Result<Self> {
        let scores = project_all(data.curves(), basis)?;
        let mut far = Self::from_scores(&scores, data.response(), data.response_mean())?;
        far.basis = Some(BasisInfo::new(basis));
        Ok(far)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn factors(&self) -> &[BlockFactor] {
        &self.factors
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.factors.len()
    }

    /// Smallest lambda giving the empty Lasso model: `max_j ||S_j y|| / sqrt(n)`.
    pub fn lambda_max(&self) -> f64 {
        let sqrt_n = (self.n() as f64).sqrt();
        self.factors
            .iter()
            .map(|f| f.basis.tr_mul(&self.y).norm() / sqrt_n)
            .fold(0.0, f64::max)
    }

    fn to_model(&self, fit: BlockFit, penalty: &PenaltySpec) -> LinearFarModel {
        let etas = self
            .factors
            .iter()
            .zip(&fit.blocks)
            .map(|(f, b)| {
                if b.iter().all(|&v| v == 0.0) {
                    vec![0.0; f.q()]
                } else {
                    f.coefficients(b).as_slice().to_vec()
                }
            })
            .collect();
        let active_set = fit
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.norm() > 0.0)
            .map(|(j, _)| j)
            .collect();
        LinearFarModel {
            basis: self.basis.clone(),
            etas,
            score_means: self
                .factors
                .iter()
                .map(|f| f.column_means.as_slice().to_vec())
                .collect(),
            blocks: fit.blocks.iter().map(|b| b.as_slice().to_vec()).collect(),
            response_mean: self.response_mean,
            lambda: penalty.lambda,
            penalty: *penalty,
            active_set,
            objective: fit.objective,
            sweeps: fit.sweeps,
            converged: fit.converged,
        }
    }

    /// Solves the Lasso stage from `lasso_warm`, then (for concave penalties)
    /// runs local-linear-approximation sweeps from the Lasso solution.
    /// Returns `(lasso_fit, final_fit)`.
    fn fit_stages(
        &self,
        penalty: &PenaltySpec,
        lasso_warm: Option<&[DVector<f64>]>,
    ) -> Result<(BlockFit, BlockFit)> {
        let lasso = PenaltySpec::lasso(penalty.lambda)?;
        let lasso_fit = fit_blocks(&self.factors, &self.y, &lasso, lasso_warm, &self.options)?;
        if penalty.family.is_lasso() {
            return Ok((lasso_fit.clone(), lasso_fit));
        }
        let mut fit = fit_blocks(
            &self.factors,
            &self.y,
            penalty,
            Some(&lasso_fit.blocks),
            &self.options,
        )?;
        fit.sweeps += lasso_fit.sweeps;
        fit.converged &= lasso_fit.converged;
        Ok((lasso_fit, fit))
    }

    /// Fit at `penalty.lambda`, warm-started from `initial` when given.
    pub fn fit(&self, penalty: &PenaltySpec, initial: Option<&LinearFarModel>) -> Result<LinearFarModel> {
        let warm = initial.map(LinearFarModel::block_vectors);
        if let Some(w) = &warm {
            if w.len() != self.p() || w.iter().any(|b| b.len() != self.n()) {
                return Err(FarError::DimensionMismatch(
                    "initial model does not match this problem".into(),
                ));
            }
        }
        let (_, fit) = self.fit_stages(penalty, warm.as_deref())?;
        Ok(self.to_model(fit, penalty))
    }

    /// Warm-started fits over an explicit decreasing grid.
    pub fn path_with_lambdas(&self, family: PenaltyFamily, lambdas: &[f64]) -> Result<FitPath> {
        if lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FarError::InvalidInput("lambda grid must be strictly decreasing".into()));
        }
        let mut models = Vec::with_capacity(lambdas.len());
        let mut lasso_warm: Option<Vec<DVector<f64>>> = None;
        for &lambda in lambdas {
            let penalty = PenaltySpec::new(family, lambda)?;
            let (lasso_fit, fit) = self.fit_stages(&penalty, lasso_warm.as_deref())?;
            lasso_warm = Some(lasso_fit.blocks);
            models.push(self.to_model(fit, &penalty));
        }
        Ok(FitPath {
            lambdas: lambdas.to_vec(),
            models,
        })
    }

    /// Path over `grid_size` log-spaced values from `lambda_max` down three
    /// decades.
    pub fn path(&self, family: PenaltyFamily, grid_size: usize) -> Result<FitPath> {
        if grid_size < 2 {
            return Err(FarError::InvalidInput("grid size must be at least 2".into()));
        }
        let lmax = self.lambda_max();
        if lmax <= 0.0 {
            return Err(FarError::InvalidInput(
                "response is orthogonal to every design; lambda_max is zero".into(),
            ));
        }
        self.path_with_lambdas(family, &log_grid(lmax, grid_size, DEFAULT_MIN_RATIO))
    }
}

/// Single fit on precomputed score matrices.
pub fn fit_at_lambda(
    scores: &[ScoreMatrix],
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    initial: Option<&LinearFarModel>,
) -> Result<LinearFarModel> {
    LinearFar::from_scores(scores, y, 0.0)?.fit(penalty, initial)
}

pub fn lambda_path(
    scores: &[ScoreMatrix],
    y: &DVector<f64>,
    family: PenaltyFamily,
    grid_size: usize,
) -> Result<FitPath> {
    LinearFar::from_scores(scores, y, 0.0)?.path(family, grid_size)
}

pub fn predict_linear(model: &LinearFarModel, curves: &CurveSet) -> Result<DVector<f64>> {
    model.predict(curves)
}
