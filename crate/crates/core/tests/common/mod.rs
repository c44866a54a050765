//! Random instances and independent reference solvers shared by the
//! integration tests.
#![allow(dead_code)]

use far_core::bspline::BSplineBasis;
use far_core::nonlinear::{build_link_design, LinkState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| rng.sample(StandardNormal))
}

pub fn centered(v: DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.add_scalar(-m)
}

pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let mu = c.mean();
        c.add_scalar_mut(-mu);
    }
    out
}

/// A small group-regression problem with a centered response.
pub struct Instance {
    pub designs: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
    /// Fraction of `lambda_max` to fit at.
    pub ratio: f64,
}

pub fn small_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(10..=30);
    let p = r.random_range(1..=3);
    let q = r.random_range(1..=3);
    let designs: Vec<DMatrix<f64>> = (0..p).map(|_| gaussian_matrix(&mut r, n, q)).collect();
    let mut y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    for d in designs.iter().take(2) {
        let beta = DVector::from_fn(q, |_, _| r.sample::<f64, _>(StandardNormal));
        y += d * beta;
    }
    Instance {
        designs,
        y: centered(y),
        ratio: r.random_range(0.05..0.9),
    }
}

/// Accelerated proximal gradient on orthonormal coordinates of each centered
/// design, run until the iterates stop moving. Returns the objective
/// `(1/2n) ||y - sum f_j||^2 + lambda sum ||f_j|| / sqrt(n)`.
pub fn prox_gradient_objective(designs: &[DMatrix<f64>], y: &DVector<f64>, lambda: f64) -> f64 {
    let n = y.len();
    let nf = n as f64;
    let qs: Vec<DMatrix<f64>> = designs
        .iter()
        .map(|d| center_columns(d).qr().q())
        .collect();
    let widths: Vec<usize> = qs.iter().map(|q| q.ncols()).collect();
    let total: usize = widths.iter().sum();
    let mut stacked = DMatrix::zeros(n, total);
    let mut at = 0;
    for q in &qs {
        stacked.columns_mut(at, q.ncols()).copy_from(q);
        at += q.ncols();
    }
    let smax = stacked.clone().singular_values().max();
    let step = nf / (smax * smax);
    let shrink = step * lambda / nf.sqrt();
    let prox = |v: &DVector<f64>| {
        let mut out = v.clone();
        let mut at = 0;
        for &w in &widths {
            let mut g = out.rows_mut(at, w);
            let norm = g.norm();
            let scale = if norm > shrink { 1.0 - shrink / norm } else { 0.0 };
            g *= scale;
            at += w;
        }
        out
    };
    let mut a = DVector::zeros(total);
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad = -(stacked.tr_mul(&(y - &stacked * &z))) / nf;
        let next = prox(&(&z - grad * step));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let moved = (&next - &a).norm();
        z = &next + (&next - &a) * ((t - 1.0) / t_next);
        a = next;
        t = t_next;
        if moved < 1e-13 {
            break;
        }
    }
    let resid = y - &stacked * &a;
    let mut pen = 0.0;
    let mut at = 0;
    for &w in &widths {
        pen += a.rows(at, w).norm();
        at += w;
    }
    resid.norm_squared() / (2.0 * nf) + lambda * pen / nf.sqrt()
}

/// Cox-de Boor recursion for basis function `i` of the given degree.
pub fn cox_de_boor(knots: &[f64], degree: usize, i: usize, x: f64) -> f64 {
    if degree == 0 {
        let last = knots[knots.len() - 1];
        let (a, b) = (knots[i], knots[i + 1]);
        // the right endpoint belongs to the last nonempty span
        return if (a <= x && x < b) || (x == last && b == last && a < b) {
            1.0
        } else {
            0.0
        };
    }
    let mut v = 0.0;
    let d1 = knots[i + degree] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * cox_de_boor(knots, degree - 1, i, x);
    }
    let d2 = knots[i + degree + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + degree + 1] - x) / d2 * cox_de_boor(knots, degree - 1, i + 1, x);
    }
    v
}

pub fn unit_vector<R: Rng>(rng: &mut R, q: usize) -> DVector<f64> {
    let v = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

/// Centered scores, unit index vectors, spline links with random
/// coefficients, and a response for the index objective.
pub struct IndexInstance {
    pub scores: Vec<DMatrix<f64>>,
    pub etas: Vec<DVector<f64>>,
    pub links: Vec<Option<LinkState>>,
    pub y: DVector<f64>,
}

pub fn index_instance(seed: u64) -> IndexInstance {
    let mut r = rng(seed);
    let n = r.random_range(20..=40);
    let p = r.random_range(1..=3);
    let q = r.random_range(2..=4);
    let d = r.random_range(4..=7);
    let mut scores = Vec::new();
    let mut etas = Vec::new();
    let mut links = Vec::new();
    for _ in 0..p {
        let s = center_columns(&gaussian_matrix(&mut r, n, q));
        let eta = unit_vector(&mut r, q);
        let (h, spline) = build_link_design(&s, &eta, d).expect("nondegenerate index");
        let means = DVector::from_iterator(d, h.column_iter().map(|c| c.mean()));
        let xi = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        scores.push(s);
        etas.push(eta);
        links.push(Some(LinkState {
            spline,
            column_means: means,
            xi,
        }));
    }
    let y = centered(DVector::from_fn(n, |_, _| 2.0 * r.sample::<f64, _>(StandardNormal)));
    IndexInstance {
        scores,
        etas,
        links,
        y,
    }
}

pub fn spline_for_test(lower: f64, upper: f64, d: usize) -> BSplineBasis {
    BSplineBasis::uniform(lower, upper, d, 3).expect("valid range")
}
