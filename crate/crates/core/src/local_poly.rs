//! Kernel-weighted one-sided polynomial fits at the cutoff.
//!
//! Fits are computed in scaled coordinates `u = (x - c) / h` and rescaled on
//! output, which keeps the design well conditioned for scores measured in
//! tens or hundreds of units.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{RdData, Side, SideSample};
use crate::error::{RdError, Result};
use crate::kernels::Kernel;
use crate::linalg::{poly_design, WeightedLs};

/// Highest polynomial order accepted by the public fitting API.
pub const MAX_ORDER: usize = 4;

/// One-sided local polynomial fit.
#[derive(Debug, Clone, Serialize)]
pub struct SideFit {
    pub side: Side,
    pub order: usize,
    pub h: f64,
    pub kernel: Kernel,
    /// Coefficients of the centered polynomial in score units, intercept first.
    pub coefficients: Vec<f64>,
    pub effective_n: usize,
    /// `Y - fitted` for the observations with positive weight, sorted by score.
    pub residuals: Vec<f64>,
    /// Weighted Gram matrix `X'WX` in score units, row-major.
    pub design_gram: Vec<Vec<f64>>,
    pub(crate) cutoff: f64,
    pub(crate) scores: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) outcomes: Vec<f64>,
    pub(crate) clusters: Option<Vec<usize>>,
    #[serde(skip)]
    pub(crate) inv_gram: DMatrix<f64>,
}

impl SideFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Scores inside the window, sorted ascending.
    pub fn window_scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Reciprocal condition number of the design Gram in scaled coordinates.
    pub fn rcond(&self) -> f64 {
        let k = self.coefficients.len();
        let g = DMatrix::from_fn(k, k, |i, j| self.design_gram[i][j] * self.h.powi((i + j) as i32));
        let ev = g.symmetric_eigenvalues();
        let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        lo / hi
    }
}

/// Level estimates at the cutoff and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdPoint {
    pub mu_left: f64,
    pub mu_right: f64,
    pub tau: f64,
}

pub fn fit_side(data: &RdData, side: Side, p: usize, h: f64, kernel: Kernel) -> Result<SideFit> {
    if p > MAX_ORDER {
        return Err(RdError::InvalidInput(format!("polynomial order {p} exceeds the maximum of {MAX_ORDER}")));
    }
    let s = data.side_sample(side);
    let fit = PolyFit::new(&s, &s.y, p, h, kernel)?;
    Ok(fit.into_side_fit(&s, kernel))
}

pub fn estimate_rd(data: &RdData, p: usize, h_left: f64, h_right: f64, kernel: Kernel) -> Result<RdPoint> {
    let (l, r) = rayon::join(
        || fit_side(data, Side::Left, p, h_left, kernel),
        || fit_side(data, Side::Right, p, h_right, kernel),
    );
    let (mu_left, mu_right) = (l?.intercept(), r?.intercept());
    Ok(RdPoint { mu_left, mu_right, tau: mu_right - mu_left })
}

/// `order! * beta_order`: the derivative of the fitted polynomial at the cutoff.
pub fn estimate_derivative(fit: &SideFit, order: usize) -> Result<f64> {
    if order > fit.order {
        return Err(RdError::DerivativeOutOfRange { order, max: fit.order });
    }
    Ok(factorial(order) * fit.coefficients[order])
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Indices of the sorted side sample that receive positive kernel weight.
pub(crate) fn kernel_window(s: &SideSample, h: f64, kernel: Kernel) -> Range<usize> {
    let weight = |x: f64| kernel.weight((x - s.cutoff) / h);
    match s.side {
        Side::Left => s.x.partition_point(|&x| weight(x) == 0.0)..s.x.len(),
        Side::Right => 0..s.x.partition_point(|&x| weight(x) > 0.0),
    }
}

pub(crate) fn distinct_sorted(x: &[f64]) -> usize {
    if x.is_empty() {
        return 0;
    }
    1 + x.windows(2).filter(|w| w[1] != w[0]).count()
}

/// A weighted polynomial fit in scaled coordinates over a kernel window.
pub(crate) struct PolyFit {
    pub range: Range<usize>,
    pub order: usize,
    pub h: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub design: DMatrix<f64>,
    pub ls: WeightedLs,
    pub inv_gram: DMatrix<f64>,
    pub beta: DVector<f64>,
}

impl PolyFit {
    pub fn new(s: &SideSample, y: &[f64], order: usize, h: f64, kernel: Kernel) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(RdError::InvalidInput(format!("bandwidth must be positive and finite, got {h}")));
        }
        let range = kernel_window(s, h, kernel);
        let needed = order + 1;
        if range.len() < needed {
            return Err(RdError::InsufficientObservations { side: s.side, needed, found: range.len() });
        }
        if distinct_sorted(&s.x[range.clone()]) < needed {
            return Err(RdError::RankDeficient { side: s.side });
        }
        let u: Vec<f64> = s.x[range.clone()].iter().map(|x| (x - s.cutoff) / h).collect();
        let w: Vec<f64> = u.iter().map(|&u| kernel.weight(u)).collect();
        let design = poly_design(&u, order);
        let ls = WeightedLs::new(&design, &w, s.side)?;
        let inv_gram = ls.inv_gram();
        let beta = ls.solve(&y[range.clone()]);
        Ok(PolyFit { range, order, h, u, w, design, ls, inv_gram, beta })
    }

    pub fn solve(&self, y: &[f64]) -> DVector<f64> {
        self.ls.solve(&y[self.range.clone()])
    }

    /// Row `j` of `G^{-1} X'W` in scaled coordinates: the equivalent kernel
    /// weights of coefficient `j`.
    pub fn equivalent_kernel(&self, j: usize) -> Vec<f64> {
        let a = self.inv_gram.row(j);
        (0..self.u.len())
            .map(|i| (a * self.design.row(i).transpose())[0] * self.w[i])
            .collect()
    }

    pub fn fitted(&self) -> Vec<f64> {
        (&self.design * &self.beta).iter().copied().collect()
    }

    /// Coefficients in score units.
    pub fn coefficients(&self) -> Vec<f64> {
        self.beta.iter().enumerate().map(|(j, b)| b / self.h.powi(j as i32)).collect()
    }

    pub fn into_side_fit(self, s: &SideSample, kernel: Kernel) -> SideFit {
        let k = self.order + 1;
        let h = self.h;
        let scale = |i: usize, j: usize| h.powi((i + j) as i32);
        let gram = self.ls.gram();
        let fitted = self.fitted();
        let outcomes = s.y[self.range.clone()].to_vec();
        SideFit {
            side: s.side,
            order: self.order,
            h,
            kernel,
            coefficients: self.coefficients(),
            effective_n: self.range.len(),
            residuals: outcomes.iter().zip(&fitted).map(|(y, f)| y - f).collect(),
            design_gram: (0..k).map(|i| (0..k).map(|j| gram[(i, j)] * scale(i, j)).collect()).collect(),
            cutoff: s.cutoff,
            scores: s.x[self.range.clone()].to_vec(),
            weights: self.w,
            outcomes,
            clusters: s.clusters.as_ref().map(|c| c[self.range.clone()].to_vec()),
            inv_gram: DMatrix::from_fn(k, k, |i, j| self.inv_gram[(i, j)] / scale(i, j)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn right_only(x: &[f64], y: &[f64]) -> RdData {
        RdData::new(x.to_vec(), y.to_vec(), 0.0).unwrap()
    }

    // explicit weighted normal equations
    fn oracle(x: &[f64], y: &[f64], w: &[f64], order: usize) -> Vec<f64> {
        let k = order + 1;
        let mut g = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for i in 0..x.len() {
            for a in 0..k {
                b[a] += w[i] * x[i].powi(a as i32) * y[i];
                for c in 0..k {
                    g[(a, c)] += w[i] * x[i].powi((a + c) as i32);
                }
            }
        }
        g.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn five_point_triangular_matches_normal_equations() {
        let x = [0.1, 0.2, 0.4, 0.7, 0.9];
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let fit = fit_side(&right_only(&x, &y), Side::Right, 1, 1.0, Kernel::Triangular).unwrap();
        let w: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        // 2x2 solve by Cramer's rule
        let (s0, s1, s2) = (0..5).fold((0.0, 0.0, 0.0), |(a, b, c), i| {
            (a + w[i], b + w[i] * x[i], c + w[i] * x[i] * x[i])
        });
        let (t0, t1) = (0..5).fold((0.0, 0.0), |(a, b), i| (a + w[i] * y[i], b + w[i] * x[i] * y[i]));
        let det = s0 * s2 - s1 * s1;
        let b0 = (t0 * s2 - s1 * t1) / det;
        let b1 = (s0 * t1 - s1 * t0) / det;
        assert!((fit.coefficients[0] - b0).abs() < 1e-12);
        assert!((fit.coefficients[1] - b1).abs() < 1e-12);
        assert_eq!(fit.effective_n, 5);
    }

    #[test]
    fn linear_data_is_interpolated_exactly() {
        let x: Vec<f64> = (0..40).map(|i| 1.0 + i as f64 * 0.37).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * (v - 1.0)).collect();
        let d = RdData::new(x, y, 1.0).unwrap();
        for k in Kernel::ALL {
            for h in [2.0, 5.0, 50.0] {
                let fit = fit_side(&d, Side::Right, 1, h, k).unwrap();
                assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
                assert!((fit.coefficients[1] - 3.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn derivative_scaling() {
        let x: Vec<f64> = (1..30).map(|i| -(i as f64) * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 4.0 * v * v).collect();
        let d = RdData::new(x, y, 0.0).unwrap();
        let fit = fit_side(&d, Side::Left, 2, 10.0, Kernel::Triangular).unwrap();
        assert!((estimate_derivative(&fit, 2).unwrap() - 8.0).abs() < 1e-9);
        assert!(estimate_derivative(&fit, 0).unwrap() - 1.0 < 1e-10);
        assert!(matches!(
            estimate_derivative(&fit, 3),
            Err(RdError::DerivativeOutOfRange { order: 3, max: 2 })
        ));
        let mut manual = fit.clone();
        manual.coefficients = vec![2.0, 3.0, 0.5];
        assert_eq!(estimate_derivative(&manual, 2).unwrap(), 1.0);
    }

    #[test]
    fn noisy_cubic_matches_four_by_four_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v + 0.5 * v * v - 0.3 * v * v * v + rng.random_range(-0.1..0.1)).collect();
        let d = right_only(&x, &y);
        let fit = fit_side(&d, Side::Right, 3, 1.5, Kernel::Epanechnikov).unwrap();
        let (xs, ys, ws): (Vec<f64>, Vec<f64>, Vec<f64>) = x
            .iter()
            .zip(&y)
            .filter(|(v, _)| **v < 1.5)
            .map(|(v, y)| (*v, *y, 1.0 - (v / 1.5).powi(2)))
            .fold((vec![], vec![], vec![]), |(mut a, mut b, mut c), (v, y, w)| {
                a.push(v);
                b.push(y);
                c.push(w);
                (a, b, c)
            });
        let o = oracle(&xs, &ys, &ws, 3);
        for (got, want) in fit.coefficients.iter().zip(&o) {
            assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()));
        }
        assert!((estimate_derivative(&fit, 3).unwrap() - 6.0 * o[3]).abs() < 1e-7);
    }

    #[test]
    fn refuses_degenerate_windows() {
        let d = right_only(&[0.5, 0.5, 0.5, 2.0], &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            fit_side(&d, Side::Right, 1, 1.0, Kernel::Uniform),
            Err(RdError::RankDeficient { side: Side::Right })
        ));
        assert!(matches!(
            fit_side(&d, Side::Right, 1, 0.1, Kernel::Uniform),
            Err(RdError::InsufficientObservations { .. })
        ));
        assert!(fit_side(&d, Side::Right, 5, 3.0, Kernel::Uniform).is_err());
        assert!(fit_side(&d, Side::Right, 1, -1.0, Kernel::Uniform).is_err());
    }

    #[test]
    fn boundary_weight_convention() {
        let d = right_only(&[0.2, 0.5, 1.0], &[1.0, 2.0, 5.0]);
        assert_eq!(fit_side(&d, Side::Right, 1, 1.0, Kernel::Uniform).unwrap().effective_n, 3);
        assert!(fit_side(&d, Side::Right, 1, 1.0, Kernel::Triangular).unwrap().effective_n == 2);
    }

    fn arb_side() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        prop::collection::vec((0.01f64..3.0, -5.0f64..5.0), 12..60).prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn residuals_are_weight_orthogonal((x, y) in arb_side(), p in 0usize..3, h in 1.0f64..4.0) {
            let d = right_only(&x, &y);
            if let Ok(fit) = fit_side(&d, Side::Right, p, h, Kernel::Triangular) {
                let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
                for j in 0..=p {
                    let s: f64 = fit.residuals.iter().zip(fit.window_scores()).zip(fit.weights())
                        .map(|((r, x), w)| w * r * x.powi(j as i32)).sum();
                    prop_assert!(s.abs() < 1e-8 * scale * h.powi(j as i32));
                }
            }
        }

        #[test]
        fn far_observations_do_not_move_the_fit((x, y) in arb_side(), extra in 4.0f64..100.0, ey in -1e3f64..1e3) {
            let base = fit_side(&right_only(&x, &y), Side::Right, 1, 3.0, Kernel::Triangular);
            let mut x2 = x.clone();
            let mut y2 = y.clone();
            x2.push(extra);
            y2.push(ey);
            let more = fit_side(&right_only(&x2, &y2), Side::Right, 1, 3.0, Kernel::Triangular);
            if let (Ok(a), Ok(b)) = (base, more) {
                prop_assert_eq!(a.coefficients, b.coefficients);
            }
        }

        #[test]
        fn affine_equivariance(a in -3.0f64..3.0, b in -10.0f64..10.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v.sin() + rng.random_range(-0.5..0.5)).collect();
            let d = RdData::new(x.clone(), y.clone(), 0.0).unwrap();
            let t = estimate_rd(&d, 1, 0.8, 0.8, Kernel::Triangular).unwrap().tau;
            let d2 = d.with_outcomes(y.iter().map(|v| a * v + b).collect()).unwrap();
            let t2 = estimate_rd(&d2, 1, 0.8, 0.8, Kernel::Triangular).unwrap().tau;
            prop_assert!((t2 - a * t).abs() < 1e-9 * (1.0 + t.abs()));
        }
    }
}
