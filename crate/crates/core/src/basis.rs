//! Time grids, orthonormal function bases and curve projection.
//!
//! Curves are observed on a shared grid over `[0, 1]`. Inner products are
//! computed with trapezoidal quadrature on that grid, and every shipped basis
//! is orthonormal under exactly that inner product, so projecting a curve is
//! a weighted matrix product.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::error::{FarError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Grid with trapezoidal weights. Points must start at 0, end at 1 and
    /// be strictly increasing.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FarError::InvalidGrid("need at least two points".into()));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(FarError::InvalidGrid("non-finite grid point".into()));
        }
        let (first, last) = (points[0], points[points.len() - 1]);
        if first.abs() > 1e-12 || (last - 1.0).abs() > 1e-12 {
            return Err(FarError::InvalidGrid(format!(
                "grid must span [0, 1], got [{first}, {last}]"
            )));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FarError::InvalidGrid("points must be strictly increasing".into()));
        }
        let m = points.len();
        let mut weights = vec![0.0; m];
        for k in 0..m - 1 {
            let h = 0.5 * (points[k + 1] - points[k]);
            weights[k] += h;
            weights[k + 1] += h;
        }
        Ok(Self { points, weights })
    }

    /// `len` equally spaced points `0 = t_1 < ... < t_len = 1`.
    pub fn uniform(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(FarError::InvalidGrid("need at least two points".into()));
        }
        let points = (0..len).map(|k| k as f64 / (len - 1) as f64).collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Same points within `tol`.
    pub fn matches(&self, other: &TimeGrid, tol: f64) -> bool {
        self.len() == other.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Fourier,
    OrthoCubicSpline,
}

impl std::str::FromStr for BasisKind {
    type Err = FarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fourier" => Ok(Self::Fourier),
            "spline" | "ortho_cubic_spline" | "bspline" => Ok(Self::OrthoCubicSpline),
            other => Err(FarError::InvalidInput(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// Serializable description of a basis; rebuilt on a grid with [`make_basis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct BasisSystem {
    spec: BasisSpec,
    /// q x T matrix, row l holds b_l evaluated on the grid.
    values: DMatrix<f64>,
    grid: TimeGrid,
}

/// The sine system `1, sqrt(2) sin(pi t), ..., sqrt(2) sin((q-1) pi t)`,
/// evaluated at `points` (q x T). This is the raw generating system used by
/// the simulation designs; it is not orthogonal to the constant.
pub fn fourier_sine_values(q: usize, points: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(q, points.len(), |l, k| {
        if l == 0 {
            1.0
        } else {
            SQRT_2 * (l as f64 * PI * points[k]).sin()
        }
    })
}

/// Modified Gram-Schmidt over the rows of `values` under the weighted inner
/// product, with one re-orthogonalization pass.
fn orthonormalize_rows(values: &mut DMatrix<f64>, weights: &[f64]) -> Result<()> {
    let (q, m) = values.shape();
    let dot = |a: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        (0..m).map(|k| weights[k] * a[(i, k)] * a[(j, k)]).sum()
    };
    for l in 0..q {
        for _pass in 0..2 {
            for prev in 0..l {
                let c = dot(values, l, prev);
                for k in 0..m {
                    let v = values[(prev, k)];
                    values[(l, k)] -= c * v;
                }
            }
        }
        let norm = dot(values, l, l).sqrt();
        if !(norm > 1e-10) {
            return Err(FarError::InvalidDimension {
                dim: q,
                reason: "basis functions are linearly dependent on this grid".into(),
            });
        }
        for k in 0..m {
            values[(l, k)] /= norm;
        }
    }
    Ok(())
}

/// Orthonormal basis of dimension `q` on `grid`.
///
/// `Fourier` orthonormalizes the sine system of [`fourier_sine_values`]; the
/// constant function stays first. `OrthoCubicSpline` orthonormalizes a
/// clamped cubic B-spline basis with `q - 4` uniform interior knots.
pub fn make_basis(kind: BasisKind, q: usize, grid: &TimeGrid) -> Result<BasisSystem> {
    if q == 0 {
        return Err(FarError::InvalidDimension {
            dim: q,
            reason: "dimension must be positive".into(),
        });
    }
    if kind == BasisKind::OrthoCubicSpline && q < 4 {
        return Err(FarError::InvalidDimension {
            dim: q,
            reason: "cubic splines need at least 4 functions".into(),
        });
    }
    if grid.len() < q {
        return Err(FarError::InvalidDimension {
            dim: q,
            reason: format!("grid has only {} points", grid.len()),
        });
    }
    let mut values = match kind {
        BasisKind::Fourier => fourier_sine_values(q, grid.points()),
        BasisKind::OrthoCubicSpline => {
            let spline = BSplineBasis::uniform(0.0, 1.0, q, 3)?;
            let mut values = DMatrix::zeros(q, grid.len());
            let mut row = vec![0.0; q];
            for (k, &t) in grid.points().iter().enumerate() {
                spline.eval_into(t, &mut row);
                for l in 0..q {
                    values[(l, k)] = row[l];
                }
            }
            values
        }
    };
    orthonormalize_rows(&mut values, grid.weights())?;
    Ok(BasisSystem {
        spec: BasisSpec { kind, dim: q },
        values,
        grid: grid.clone(),
    })
}

impl BasisSystem {
    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `B W B^T` under grid quadrature.
    pub fn gram(&self) -> DMatrix<f64> {
        let weighted = self.weighted_values();
        &self.values * weighted.transpose()
    }

    fn weighted_values(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        DMatrix::from_fn(self.values.nrows(), self.values.ncols(), |l, k| {
            self.values[(l, k)] * w[k]
        })
    }

    /// Quadrature scores of each row of `curves` (n x T) against the basis.
    pub fn project(&self, curves: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if curves.ncols() != self.grid.len() {
            return Err(FarError::GridMismatch(format!(
                "curves have {} columns, grid has {} points",
                curves.ncols(),
                self.grid.len()
            )));
        }
        if curves.iter().any(|v| !v.is_finite()) {
            return Err(FarError::NonFinite("curve values".into()));
        }
        Ok(curves * self.weighted_values().transpose())
    }

    /// Curves `b(t)^T theta_i` on the grid for each score row.
    pub fn synthesize(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        scores * &self.values
    }
}

/// Curves of `p` predictors, each an `n x T` matrix on a shared grid.
#[derive(Debug, Clone)]
pub struct CurveSet {
    grid: TimeGrid,
    curves: Vec<DMatrix<f64>>,
}

impl CurveSet {
    pub fn new(grid: TimeGrid, curves: Vec<DMatrix<f64>>) -> Result<Self> {
        if curves.is_empty() {
            return Err(FarError::InvalidInput("no predictors".into()));
        }
        let n = curves[0].nrows();
        for (j, c) in curves.iter().enumerate() {
            if c.ncols() != grid.len() {
                return Err(FarError::GridMismatch(format!(
                    "predictor {j} has {} columns, grid has {} points",
                    c.ncols(),
                    grid.len()
                )));
            }
            if c.nrows() != n {
                return Err(FarError::DimensionMismatch(format!(
                    "predictor {j} has {} curves, expected {n}",
                    c.nrows()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(FarError::NonFinite(format!("curves of predictor {j}")));
            }
        }
        Ok(Self { grid, curves })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.curves[0].nrows()
    }

    pub fn p(&self) -> usize {
        self.curves.len()
    }

    pub fn predictor(&self, j: usize) -> Option<&DMatrix<f64>> {
        self.curves.get(j)
    }

    pub fn curves(&self) -> &[DMatrix<f64>] {
        &self.curves
    }

    /// Rows `rows` of every predictor, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CurveSet {
        let curves = self.curves.iter().map(|c| c.select_rows(rows)).collect();
        CurveSet {
            grid: self.grid.clone(),
            curves,
        }
    }
}

/// Curves plus a centered scalar response.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    curves: CurveSet,
    response: DVector<f64>,
    response_mean: f64,
}

impl FunctionalDataset {
    /// Centers `raw_response` and keeps its mean as the prediction offset.
    pub fn new(curves: CurveSet, raw_response: &[f64]) -> Result<Self> {
        if raw_response.len() != curves.n() {
            return Err(FarError::DimensionMismatch(format!(
                "{} responses for {} curves",
                raw_response.len(),
                curves.n()
            )));
        }
        let (response, response_mean) = center_response(raw_response)?;
        Ok(Self {
            curves,
            response,
            response_mean,
        })
    }

    pub fn curves(&self) -> &CurveSet {
        &self.curves
    }

    pub fn grid(&self) -> &TimeGrid {
        self.curves.grid()
    }

    pub fn n(&self) -> usize {
        self.curves.n()
    }

    pub fn p(&self) -> usize {
        self.curves.p()
    }

    /// Centered response.
    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    /// Response on the original scale.
    pub fn raw_response(&self) -> DVector<f64> {
        self.response.add_scalar(self.response_mean)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<FunctionalDataset> {
        let raw = self.raw_response();
        let y: Vec<f64> = rows.iter().map(|&i| raw[i]).collect();
        FunctionalDataset::new(self.curves.select_rows(rows), &y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub predictor: usize,
    /// n x q, row i holds the basis coefficients of curve i.
    pub scores: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn q(&self) -> usize {
        self.scores.ncols()
    }
}

/// Scores of predictor `j`: `scores[i][l] = sum_k w_k X_ij(t_k) b_l(t_k)`.
pub fn project_curves(curves: &CurveSet, basis: &BasisSystem, j: usize) -> Result<ScoreMatrix> {
    let x = curves.predictor(j).ok_or(FarError::UnknownPredictor(j))?;
    if !curves.grid().matches(basis.grid(), 1e-12) {
        return Err(FarError::GridMismatch(
            "curve grid differs from basis grid".into(),
        ));
    }
    Ok(ScoreMatrix {
        predictor: j,
        scores: basis.project(x)?,
    })
}

/// Scores of every predictor.
pub fn project_all(curves: &CurveSet, basis: &BasisSystem) -> Result<Vec<ScoreMatrix>> {
    (0..curves.p()).map(|j| project_curves(curves, basis, j)).collect()
}

pub fn center_response(raw: &[f64]) -> Result<(DVector<f64>, f64)> {
    if raw.is_empty() {
        return Err(FarError::InvalidInput("empty response".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(FarError::NonFinite("response".into()));
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let centered = DVector::from_iterator(raw.len(), raw.iter().map(|v| v - mean));
    Ok((centered, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_identity_error(g: &DMatrix<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    #[test]
    fn trapezoid_weights_sum_to_one() {
        let g = TimeGrid::uniform(200).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(g.weights().iter().all(|&w| w > 0.0));
        let irregular = TimeGrid::new(vec![0.0, 0.1, 0.5, 0.55, 1.0]).unwrap();
        assert!((irregular.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.9]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }

    #[test]
    fn raw_sine_system_closed_form() {
        let grid = TimeGrid::uniform(201).unwrap();
        let raw = fourier_sine_values(4, grid.points());
        // t = 0.25 is grid index 50
        assert!((raw[(1, 50)] - SQRT_2 * (PI / 4.0).sin()).abs() < 1e-12);
        assert!((raw[(1, 50)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fourier_one_is_constant() {
        let grid = TimeGrid::uniform(37).unwrap();
        let b = make_basis(BasisKind::Fourier, 1, &grid).unwrap();
        assert!(b.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!((b.gram()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spline_gram_is_identity() {
        let grid = TimeGrid::uniform(200).unwrap();
        let b = make_basis(BasisKind::OrthoCubicSpline, 5, &grid).unwrap();
        // independent quadrature oracle: explicit double loop over the grid
        let w = grid.weights();
        let v = b.values();
        for i in 0..5 {
            for j in 0..5 {
                let s: f64 = (0..200).map(|k| w[k] * v[(i, k)] * v[(j, k)]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((s - target).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn every_dimension_is_orthonormal() {
        let grid = TimeGrid::uniform(200).unwrap();
        for q in 1..=12 {
            let f = make_basis(BasisKind::Fourier, q, &grid).unwrap();
            assert!(max_identity_error(&f.gram()) < 1e-8, "fourier q={q}");
            if q >= 4 {
                let s = make_basis(BasisKind::OrthoCubicSpline, q, &grid).unwrap();
                assert!(max_identity_error(&s.gram()) < 1e-8, "spline q={q}");
            }
        }
    }

    #[test]
    fn make_basis_errors() {
        let grid = TimeGrid::uniform(10).unwrap();
        assert!(make_basis(BasisKind::OrthoCubicSpline, 3, &grid).is_err());
        assert!(make_basis(BasisKind::Fourier, 0, &grid).is_err());
        assert!(make_basis(BasisKind::Fourier, 11, &grid).is_err());
    }

    #[test]
    fn projection_of_basis_function_and_zero() {
        let grid = TimeGrid::uniform(200).unwrap();
        let b = make_basis(BasisKind::Fourier, 4, &grid).unwrap();
        let mut curves = DMatrix::zeros(2, 200);
        curves.set_row(0, &b.values().row(1));
        let set = CurveSet::new(grid, vec![curves]).unwrap();
        let s = project_curves(&set, &b, 0).unwrap();
        for l in 0..4 {
            let target = if l == 1 { 1.0 } else { 0.0 };
            assert!((s.scores[(0, l)] - target).abs() < 1e-3);
            assert_eq!(s.scores[(1, l)], 0.0);
        }
    }

    #[test]
    fn projection_recovers_generating_coefficients() {
        let grid = TimeGrid::uniform(200).unwrap();
        let b = make_basis(BasisKind::Fourier, 4, &grid).unwrap();
        let theta = DMatrix::from_row_slice(1, 4, &[0.3, -1.2, 0.7, 2.0]);
        let set = CurveSet::new(grid, vec![b.synthesize(&theta)]).unwrap();
        let s = project_curves(&set, &b, 0).unwrap();
        for l in 0..4 {
            assert!((s.scores[(0, l)] - theta[(0, l)]).abs() < 1e-3);
        }
    }

    #[test]
    fn projection_rejects_mismatch() {
        let b = make_basis(BasisKind::Fourier, 3, &TimeGrid::uniform(50).unwrap()).unwrap();
        let set = CurveSet::new(TimeGrid::uniform(40).unwrap(), vec![DMatrix::zeros(3, 40)]).unwrap();
        assert!(matches!(project_curves(&set, &b, 0), Err(FarError::GridMismatch(_))));
        assert!(matches!(project_curves(&set, &b, 4), Err(FarError::UnknownPredictor(4))));
        assert!(b.project(&DMatrix::from_element(1, 50, f64::NAN)).is_err());
    }

    #[test]
    fn centering() {
        let (c, m) = center_response(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(c.as_slice(), &[-1.0, 0.0, 1.0]);
        let (c, m) = center_response(&[5.0, 5.0]).unwrap();
        assert_eq!(m, 5.0);
        assert_eq!(c.as_slice(), &[0.0, 0.0]);
        assert!(center_response(&[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn centered_mean_is_zero(v in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
                let (c, _) = center_response(&v).unwrap();
                prop_assert!(c.mean().abs() < 1e-12 * (1.0 + v.iter().map(|x| x.abs()).fold(0.0, f64::max)));
            }

            #[test]
            fn projection_is_linear(
                a in -3.0f64..3.0,
                c in -3.0f64..3.0,
                x in proptest::collection::vec(-2.0f64..2.0, 60),
                z in proptest::collection::vec(-2.0f64..2.0, 60),
            ) {
                let grid = TimeGrid::uniform(60).unwrap();
                let b = make_basis(BasisKind::OrthoCubicSpline, 6, &grid).unwrap();
                let xm = DMatrix::from_row_slice(1, 60, &x);
                let zm = DMatrix::from_row_slice(1, 60, &z);
                let combo = &xm * a + &zm * c;
                let lhs = b.project(&combo).unwrap();
                let rhs = b.project(&xm).unwrap() * a + b.project(&zm).unwrap() * c;
                let scale = 1.0 + rhs.amax();
                prop_assert!((lhs - rhs).amax() <= 1e-12 * scale);
            }

            #[test]
            fn in_span_reconstruction(theta in proptest::collection::vec(-3.0f64..3.0, 7)) {
                let grid = TimeGrid::uniform(200).unwrap();
                let b = make_basis(BasisKind::OrthoCubicSpline, 7, &grid).unwrap();
                let s = DMatrix::from_row_slice(1, 7, &theta);
                let curve = b.synthesize(&s);
                let back = b.synthesize(&b.project(&curve).unwrap());
                let scale = curve.amax().max(1e-12);
                prop_assert!((back - &curve).amax() <= 1e-6 * scale);
            }
        }
    }
}
