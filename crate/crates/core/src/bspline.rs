//! Clamped B-spline bases with uniformly spaced interior knots.
//!
//! Evaluation uses the triangular de Boor scheme, which produces all
//! nonzero basis functions on a knot span in one pass. Derivatives come from
//! the degree-lowered basis on the same knot vector.

use serde::{Deserialize, Serialize};

use crate::error::{FarError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
    dim: usize,
}

impl BSplineBasis {
    /// Clamped basis of `dim` functions on `[lower, upper]` with
    /// `dim - degree - 1` uniformly spaced interior knots.
    pub fn uniform(lower: f64, upper: f64, dim: usize, degree: usize) -> Result<Self> {
        if dim < degree + 1 {
            return Err(FarError::InvalidDimension {
                dim,
                reason: format!("need at least {} functions for degree {}", degree + 1, degree),
            });
        }
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(FarError::DegenerateIndex { lower, upper });
        }
        let interior = dim - degree - 1;
        let mut knots = Vec::with_capacity(dim + degree + 1);
        knots.extend(std::iter::repeat_n(lower, degree + 1));
        let width = upper - lower;
        for k in 1..=interior {
            knots.push(lower + width * k as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self { knots, degree, dim })
    }

    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(FarError::InvalidInput("too few knots for spline degree".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) || knots.iter().any(|k| !k.is_finite()) {
            return Err(FarError::InvalidInput("knots must be finite and nondecreasing".into()));
        }
        let dim = knots.len() - degree - 1;
        Ok(Self { knots, degree, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn lower(&self) -> f64 {
        self.knots[self.degree]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.dim]
    }

    /// Index `s` with `knots[s] <= x < knots[s+1]`, restricted to the valid
    /// spans; the right endpoint belongs to the last nonempty span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.dim;
        if x >= self.knots[n] {
            let mut s = n - 1;
            while s > p && self.knots[s] == self.knots[s + 1] {
                s -= 1;
            }
            return s;
        }
        if x <= self.knots[p] {
            return p;
        }
        // binary search over [p, n)
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis values of the given degree on span `s` at `x`.
    fn local_values(&self, s: usize, x: f64, degree: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// All `dim` basis values at `x`. Points outside the support are clamped
    /// to the nearest endpoint.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        assert!(self.degree < 16, "spline degree too large");
        let x = x.clamp(self.lower(), self.upper());
        out.iter_mut().for_each(|v| *v = 0.0);
        let s = self.span(x);
        let mut local = [0.0f64; 16];
        self.local_values(s, x, self.degree, &mut local);
        for r in 0..=self.degree {
            out[s - self.degree + r] = local[r];
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// First derivatives of all basis functions at `x` (clamped like `eval`).
    pub fn eval_deriv_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = self.degree;
        if p == 0 {
            return;
        }
        let x = x.clamp(self.lower(), self.upper());
        let s = self.span(x);
        let t = &self.knots;
        let mut lower = [0.0f64; 16];
        self.local_values(s, x, p - 1, &mut lower);
        // lower[r] is N_{s-p+1+r, p-1}(x), r = 0..p-1
        // N'_{i,p} = p (N_{i,p-1}/(t_{i+p}-t_i) - N_{i+1,p-1}/(t_{i+p+1}-t_{i+1}))
        let low_at = |i: isize| -> f64 {
            let r = i - (s as isize - p as isize + 1);
            if r < 0 || r >= p as isize {
                0.0
            } else {
                lower[r as usize]
            }
        };
        for i in (s - p)..=s {
            let ii = i as isize;
            let d1 = t[i + p] - t[i];
            let d2 = t[i + p + 1] - t[i + 1];
            let a = if d1 > 0.0 { low_at(ii) / d1 } else { 0.0 };
            let b = if d2 > 0.0 { low_at(ii + 1) / d2 } else { 0.0 };
            out[i] = p as f64 * (a - b);
        }
    }

    pub fn eval_deriv(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_deriv_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cox-de Boor recursion straight from the definition.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = knots[i] <= x && x < knots[i + 1];
            // right endpoint belongs to the last nonempty interval
            let at_end = last && x == knots[i + 1] && knots[i] < knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, last);
        }
        v
    }

    fn oracle_row(b: &BSplineBasis, x: f64) -> Vec<f64> {
        let last = x >= b.upper();
        (0..b.dim())
            .map(|i| {
                // only the final nonempty degree-0 interval takes the endpoint
                if last {
                    let n = b.dim();
                    let k = b.knots();
                    let mut end_span = n - 1;
                    while k[end_span] == k[end_span + 1] {
                        end_span -= 1;
                    }
                    cox_de_boor_end(k, i, b.degree(), x, end_span)
                } else {
                    cox_de_boor(b.knots(), i, b.degree(), x, false)
                }
            })
            .collect()
    }

    fn cox_de_boor_end(knots: &[f64], i: usize, p: usize, x: f64, end_span: usize) -> f64 {
        if p == 0 {
            return if i == end_span { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor_end(knots, i, p - 1, x, end_span);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor_end(knots, i + 1, p - 1, x, end_span);
        }
        v
    }

    #[test]
    fn matches_recursive_definition() {
        let b = BSplineBasis::uniform(-1.3, 2.1, 7, 3).unwrap();
        for k in 0..=200 {
            let x = -1.3 + 3.4 * k as f64 / 200.0;
            let fast = b.eval(x);
            let slow = oracle_row(&b, x);
            for (a, o) in fast.iter().zip(&slow) {
                assert!((a - o).abs() < 1e-12, "x={x}: {a} vs {o}");
            }
        }
    }

    #[test]
    fn partition_of_unity_and_endpoints() {
        let b = BSplineBasis::uniform(0.0, 1.0, 6, 3).unwrap();
        for k in 0..=50 {
            let row = b.eval(k as f64 / 50.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let first = b.eval(0.0);
        assert_eq!(first[0], 1.0);
        assert!(first[1..].iter().all(|&v| v == 0.0));
        let last = b.eval(1.0);
        assert!((last[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let b = BSplineBasis::uniform(0.0, 2.0, 8, 3).unwrap();
        let h = 1e-6;
        for k in 1..40 {
            let x = 2.0 * k as f64 / 40.0 + 0.013;
            let d = b.eval_deriv(x);
            let up = b.eval(x + h);
            let dn = b.eval(x - h);
            for i in 0..8 {
                let fd = (up[i] - dn[i]) / (2.0 * h);
                assert!((d[i] - fd).abs() < 1e-6, "i={i} x={x}: {} vs {fd}", d[i]);
            }
        }
    }

    #[test]
    fn derivative_sums_to_zero() {
        let b = BSplineBasis::uniform(-3.0, 3.0, 10, 3).unwrap();
        for k in 0..=30 {
            let d = b.eval_deriv(-3.0 + 0.2 * k as f64);
            assert!(d.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_degenerate_range() {
        assert!(matches!(
            BSplineBasis::uniform(1.0, 1.0, 5, 3),
            Err(FarError::DegenerateIndex { .. })
        ));
        assert!(BSplineBasis::uniform(0.0, 1.0, 3, 3).is_err());
    }
}
