//! Uniform B-spline grids and basis evaluation.
//!
//! A grid of degree `k` with `G` intervals over `[lo, hi]` uses the extended
//! uniform knot vector `t_i = lo + (i - k) h`, `i = 0..=G + 2k`, `h = (hi - lo) / G`.
//! It carries `G + k` basis functions that form a partition of unity on
//! `[lo, hi]`. Inputs are clamped to the domain before evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    degree: usize,
    intervals: usize,
    lo: f64,
    hi: f64,
}

impl SplineGrid {
    pub fn new(degree: usize, intervals: usize, lo: f64, hi: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Config("spline grid needs at least one interval".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("spline domain [{lo}, {hi}] is empty or not finite")));
        }
        Ok(SplineGrid { degree, intervals, lo, hi })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// Number of basis functions, `G + k`.
    pub fn basis_count(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.lo + (i as f64 - self.degree as f64) * self.spacing()
    }

    /// The full extended knot vector, length `G + 2k + 1`.
    pub fn knots(&self) -> Vec<f64> {
        (0..=self.intervals + 2 * self.degree).map(|i| self.knot(i)).collect()
    }

    /// Greville abscissae: coefficients that make the spline reproduce `f(x) = x`.
    pub fn greville(&self) -> Vec<f64> {
        let k = self.degree;
        (0..self.basis_count())
            .map(|j| {
                if k == 0 {
                    0.5 * (self.knot(j) + self.knot(j + 1))
                } else {
                    (1..=k).map(|r| self.knot(j + r)).sum::<f64>() / k as f64
                }
            })
            .collect()
    }

    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.basis_count()];
        self.eval_into(x, &mut out, None);
        out
    }

    /// Writes all `G + k` basis values at `x` into `out`, and optionally their
    /// derivatives with respect to `x` into `deriv`. The derivative is zero
    /// where `x` was clamped.
    pub fn eval_into(&self, x: f64, out: &mut [f64], deriv: Option<&mut [f64]>) {
        let k = self.degree;
        let g = self.intervals;
        debug_assert_eq!(out.len(), g + k);
        out.fill(0.0);
        let clamped = x < self.lo || x > self.hi;
        let xc = x.clamp(self.lo, self.hi);
        let h = self.spacing();
        let cell = (((xc - self.lo) / h).floor().max(0.0) as usize).min(g - 1);
        let span = cell + k;

        // Triangular de Boor table; `n[r]` is the value of basis `span - j + r` at degree j.
        let mut n = [0.0f64; MAX_DEGREE + 1];
        let mut lower = [0.0f64; MAX_DEGREE + 1];
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        assert!(k <= MAX_DEGREE, "spline degree {k} exceeds {MAX_DEGREE}");
        n[0] = 1.0;
        for j in 1..=k {
            if j == k {
                lower[..k].copy_from_slice(&n[..k]);
            }
            left[j] = xc - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - xc;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let first = span - k;
        out[first..=span].copy_from_slice(&n[..=k]);

        if let Some(d) = deriv {
            d.fill(0.0);
            if clamped || k == 0 {
                return;
            }
            // B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h on a uniform grid.
            for r in 0..=k {
                let a = if r >= 1 { lower[r - 1] } else { 0.0 };
                let b = if r < k { lower[r] } else { 0.0 };
                d[first + r] = (a - b) / h;
            }
        }
    }
}

pub const MAX_DEGREE: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_grids_rejected() {
        assert!(SplineGrid::new(3, 0, -1.0, 1.0).is_err());
        assert!(SplineGrid::new(3, 5, 1.0, 1.0).is_err());
        assert!(SplineGrid::new(3, 5, 1.0, -1.0).is_err());
    }

    #[test]
    fn knot_vector_is_uniform_and_extended() {
        let g = SplineGrid::new(3, 5, -1.0, 1.0).unwrap();
        let t = g.knots();
        assert_eq!(t.len(), 5 + 2 * 3 + 1);
        assert_eq!(g.basis_count(), 8);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.4).abs() < 1e-12);
        }
        assert!((t[3] + 1.0).abs() < 1e-12);
        assert!((t[8] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let g = SplineGrid::new(0, 4, -1.0, 1.0).unwrap();
        assert_eq!(g.basis(-0.9), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.basis(0.1), vec![0.0, 0.0, 1.0, 0.0]);
        // right endpoint belongs to the last interval
        assert_eq!(g.basis(1.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn clamps_outside_domain() {
        let g = SplineGrid::new(3, 5, -1.0, 1.0).unwrap();
        assert_eq!(g.basis(7.0), g.basis(1.0));
        assert_eq!(g.basis(-7.0), g.basis(-1.0));
        let mut b = vec![0.0; 8];
        let mut d = vec![1.0; 8];
        g.eval_into(3.0, &mut b, Some(&mut d));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = SplineGrid::new(3, 5, -1.0, 1.0).unwrap();
        let eps = 1e-6;
        for &x in &[-0.93, -0.4, 0.0, 0.13, 0.77] {
            let mut b = vec![0.0; 8];
            let mut d = vec![0.0; 8];
            g.eval_into(x, &mut b, Some(&mut d));
            let bp = g.basis(x + eps);
            let bm = g.basis(x - eps);
            for j in 0..8 {
                let fd = (bp[j] - bm[j]) / (2.0 * eps);
                assert!((fd - d[j]).abs() < 1e-7, "x={x} j={j} fd={fd} d={}", d[j]);
            }
        }
    }

    #[test]
    fn greville_reproduces_identity() {
        for k in 1..=4 {
            let g = SplineGrid::new(k, 5, -1.0, 1.0).unwrap();
            let c = g.greville();
            for i in 0..=40 {
                let x = -1.0 + i as f64 * 0.05;
                let y: f64 = g.basis(x).iter().zip(&c).map(|(b, c)| b * c).sum();
                assert!((y - x).abs() < 1e-12, "k={k} x={x} y={y}");
            }
        }
    }
}
