//! M-spline and I-spline bases for the parametric baseline hazard.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::math::{quantile_sorted, sorted_copy};

/// M-spline basis with interior knots at the event-time quartiles.
///
/// Beyond the upper boundary knot the basis is held at its boundary value, so the
/// baseline hazard is extrapolated as a constant and the cumulative hazard grows
/// linearly. Below the lower boundary both are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSplineBasis {
    pub degree: usize,
    pub interior_knots: Vec<f64>,
    pub boundary_knots: (f64, f64),
    /// Boundary knots repeated degree + 1 times around the interior knots.
    knots: Vec<f64>,
}

impl MSplineBasis {
    /// Builds a basis from explicit knots.
    pub fn new(
        degree: usize,
        interior_knots: Vec<f64>,
        boundary_knots: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = boundary_knots;
        check_finite(&interior_knots, "spline knots")?;
        check_finite(&[lo, hi], "spline boundary knots")?;
        if degree == 0 {
            return Err(Error::config("spline degree must be at least 1"));
        }
        if !(lo < hi) || lo < 0.0 {
            return Err(Error::config(
                "boundary knots must satisfy 0 <= lower < upper",
            ));
        }
        if interior_knots.windows(2).any(|w| w[0] >= w[1])
            || interior_knots.iter().any(|&k| k <= lo || k >= hi)
        {
            return Err(Error::config(
                "interior knots must be strictly increasing inside the boundary",
            ));
        }
        let order = degree + 1;
        let mut knots = vec![lo; order];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(hi, order));
        Ok(Self {
            degree,
            interior_knots,
            boundary_knots,
            knots,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    fn order(&self) -> usize {
        self.degree + 1
    }

    /// M-spline values at `t`; each basis function integrates to one over the boundary interval.
    pub fn basis_eval(&self, t: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary_knots;
        let n = self.n_basis();
        if t < lo {
            return vec![0.0; n];
        }
        let tc = t.min(hi);
        let k = self.order();
        let b = bspline_values(&self.knots, k, tc);
        (0..n)
            .map(|i| {
                let width = self.knots[i + k] - self.knots[i];
                if width > 0.0 {
                    k as f64 * b[i] / width
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// I-spline values (integrals of the M-splines from the lower boundary to `t`).
    pub fn integrated_eval(&self, t: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary_knots;
        let n = self.n_basis();
        if t <= lo {
            return vec![0.0; n];
        }
        if t > hi {
            let m = self.basis_eval(hi);
            return m.iter().map(|mi| 1.0 + mi * (t - hi)).collect();
        }
        // Integral of M_i is the tail sum of order-(k+1) B-splines on the knot vector
        // with one extra repeat of each boundary knot.
        let k = self.order();
        let mut ext = Vec::with_capacity(self.knots.len() + 2);
        ext.push(lo);
        ext.extend_from_slice(&self.knots);
        ext.push(hi);
        let b = bspline_values(&ext, k + 1, t);
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            acc += b[i + 1];
            out[i] = acc.clamp(0.0, 1.0);
        }
        out
    }
}

/// All order-`k` B-spline values at `t` on `knots` (Cox-de Boor), right-continuous
/// except at the final knot where the left limit is used.
fn bspline_values(knots: &[f64], k: usize, t: f64) -> Vec<f64> {
    let m = knots.len();
    let n_final = m - k;
    let last = knots[m - 1];
    let mut b = vec![0.0; m - 1];
    // Locate the span containing t.
    let span = if t >= last {
        (0..m - 1).rev().find(|&i| knots[i] < knots[i + 1])
    } else {
        (0..m - 1).find(|&i| knots[i] <= t && t < knots[i + 1])
    };
    let Some(span) = span else {
        return vec![0.0; n_final];
    };
    b[span] = 1.0;
    for order in 2..=k {
        for i in 0..m - order {
            let d1 = knots[i + order - 1] - knots[i];
            let d2 = knots[i + order] - knots[i + 1];
            let left = if d1 > 0.0 {
                (t - knots[i]) / d1 * b[i]
            } else {
                0.0
            };
            let right = if d2 > 0.0 {
                (knots[i + order] - t) / d2 * b[i + 1]
            } else {
                0.0
            };
            b[i] = left + right;
        }
    }
    b.truncate(n_final);
    b
}

/// Builds a basis of the given degree from observed event times.
///
/// Interior knots sit at the quartiles of the event times; boundary knots at
/// min - eps and max + eps (lower clamped at zero), with eps the smallest gap between
/// distinct event times. Coinciding quartiles are collapsed with a warning.
pub fn build_mspline_basis(event_times: &[f64], degree: usize) -> Result<MSplineBasis> {
    check_finite(event_times, "event times")?;
    if event_times.iter().any(|&t| t <= 0.0) {
        return Err(Error::invalid("event times must be positive"));
    }
    let sorted = sorted_copy(event_times);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid(
            "at least two distinct event times are needed for the spline basis",
        ));
    }
    let eps = distinct
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let lo = (distinct[0] - eps).max(0.0);
    let hi = distinct[distinct.len() - 1] + eps;
    let quartiles: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .map(|&p| quantile_sorted(&sorted, p))
        .collect();
    let mut interior = quartiles.clone();
    interior.dedup();
    interior.retain(|&k| k > lo && k < hi);
    if interior.len() < quartiles.len() {
        log::warn!(
            "event-time quartiles {:?} coincide; using {} interior knot(s)",
            quartiles,
            interior.len()
        );
    }
    MSplineBasis::new(degree, interior, (lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Ramsay's recursive M-spline definition, used as an independent oracle.
    fn m_recursive(knots: &[f64], i: usize, k: usize, t: f64) -> f64 {
        let (a, b) = (knots[i], knots[i + k]);
        if b <= a {
            return 0.0;
        }
        if k == 1 {
            let last = *knots.last().unwrap();
            let inside = (a <= t && t < b) || (t == last && b == last);
            return if inside { 1.0 / (b - a) } else { 0.0 };
        }
        let kf = k as f64;
        kf * ((t - a) * m_recursive(knots, i, k - 1, t)
            + (b - t) * m_recursive(knots, i + 1, k - 1, t))
            / ((kf - 1.0) * (b - a))
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for j in 1..n {
            s += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn knots_for_simple_event_times() {
        let b = build_mspline_basis(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        assert_eq!(b.interior_knots, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.boundary_knots, (0.0, 6.0));
        assert_eq!(b.n_basis(), 7);
    }

    #[test]
    fn too_few_distinct_event_times() {
        assert!(build_mspline_basis(&[2.0, 2.0, 2.0], 3).is_err());
        assert!(build_mspline_basis(&[1.0], 3).is_err());
    }

    #[test]
    fn coinciding_quartiles_are_collapsed() {
        let times = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 9.0];
        let b = build_mspline_basis(&times, 3).unwrap();
        assert!(b.interior_knots.windows(2).all(|w| w[0] < w[1]));
        assert!(b.interior_knots.len() < 3);
    }

    #[test]
    fn matches_recursive_definition() {
        let b = build_mspline_basis(&[0.3, 0.9, 1.4, 2.2, 2.5, 3.9, 4.4], 3).unwrap();
        let (lo, hi) = b.boundary_knots;
        for j in 0..=200 {
            let t = lo + (hi - lo) * j as f64 / 200.0;
            let v = b.basis_eval(t);
            for (i, vi) in v.iter().enumerate() {
                let oracle = m_recursive(&b.knots, i, b.order(), t);
                assert!(
                    (vi - oracle).abs() < 1e-10 * (1.0 + oracle.abs()),
                    "t={t} i={i}: {vi} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn integrated_basis_matches_quadrature() {
        let b = build_mspline_basis(&[0.5, 0.7, 1.1, 1.6, 2.0, 2.4, 3.3, 5.0], 3).unwrap();
        let (lo, hi) = b.boundary_knots;
        let mut breaks = vec![lo];
        breaks.extend_from_slice(&b.interior_knots);
        breaks.push(hi);
        for i in 0..b.n_basis() {
            // Piecewise cubic: Simpson on each knot span is exact up to rounding.
            let total: f64 = breaks
                .windows(2)
                .map(|w| simpson(|t| b.basis_eval(t)[i], w[0], w[1], 64))
                .sum();
            assert!((total - b.integrated_eval(hi)[i]).abs() < 1e-8);
            assert!((total - 1.0).abs() < 1e-8);
            // Partial integral at an interior point.
            let t = 0.5 * (breaks[1] + breaks[2]);
            let partial = simpson(|s| b.basis_eval(s)[i], lo, breaks[1], 64)
                + simpson(|s| b.basis_eval(s)[i], breaks[1], t, 64);
            assert!((partial - b.integrated_eval(t)[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn simplex_weighted_density_integrates_to_one() {
        let b = build_mspline_basis(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        let w = [0.1, 0.2, 0.05, 0.25, 0.15, 0.15, 0.1];
        let total: f64 = b
            .integrated_eval(6.0)
            .iter()
            .zip(&w)
            .map(|(i, w)| i * w)
            .sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn extrapolation_is_linear_beyond_upper_boundary() {
        let b = build_mspline_basis(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        let m = b.basis_eval(6.0);
        let i8 = b.integrated_eval(8.0);
        for (mi, ii) in m.iter().zip(&i8) {
            assert_relative_eq!(*ii, 1.0 + 2.0 * mi, max_relative = 1e-12);
        }
        assert_eq!(b.basis_eval(9.0), m);
    }

    proptest! {
        #[test]
        fn basis_nonnegative_and_ispline_monotone(
            times in prop::collection::vec(0.01f64..10.0, 5..30),
            grid in prop::collection::vec(0.0f64..12.0, 2..40),
        ) {
            let Ok(b) = build_mspline_basis(&times, 3) else { return Ok(()); };
            let mut grid = grid;
            grid.sort_by(f64::total_cmp);
            let mut prev = vec![0.0; b.n_basis()];
            for &t in &grid {
                prop_assert!(b.basis_eval(t).iter().all(|&v| v >= 0.0));
                let cur = b.integrated_eval(t);
                for (p, c) in prev.iter().zip(&cur) {
                    prop_assert!(*c >= p - 1e-12);
                }
                if t <= b.boundary_knots.1 {
                    prop_assert!(cur.iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
                prev = cur;
            }
            let at_hi = b.integrated_eval(b.boundary_knots.1);
            prop_assert!(at_hi.iter().all(|v| (v - 1.0).abs() < 1e-9));
            prop_assert!(b.integrated_eval(b.boundary_knots.0).iter().all(|&v| v == 0.0));
        }
    }
}
