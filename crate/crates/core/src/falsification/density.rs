//! Continuity test for the density of the score at the cutoff, based on
//! local polynomial fits of the empirical distribution function.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{iqr_type2, sd};
use crate::dataset::{RdData, Side, SideSample};
use crate::error::{RdError, Result};
use crate::inference::{critical_value, two_sided_p};
use crate::kernels::Kernel;
use crate::local_poly::{factorial, PolyFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    /// Order of the local polynomial fitted to the distribution function.
    pub order: usize,
    pub kernel: Kernel,
    /// Fixed `(h_left, h_right)`; selected when unset.
    pub h: Option<(f64, f64)>,
    pub level: f64,
    /// Evaluation points per side for the plotted density curve.
    pub curve_points: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig { order: 2, kernel: Kernel::Triangular, h: None, level: 95.0, curve_points: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub side: Side,
    pub x: f64,
    pub f: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub f_left: f64,
    pub f_right: f64,
    pub se_left: f64,
    pub se_right: f64,
    pub se_difference: f64,
    pub h_left: f64,
    pub h_right: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub effective_n_left: usize,
    pub effective_n_right: usize,
    pub order: usize,
    pub kernel: Kernel,
    pub curve: Vec<DensityPoint>,
}

const MIN_SIDE: usize = 10;

struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    fn new(x: &[f64]) -> Self {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ecdf { sorted }
    }

    fn n(&self) -> usize {
        self.sorted.len()
    }

    fn at(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.n() as f64
    }
}

struct SideDensity {
    fit: PolyFit,
    sample: SideSample,
}

impl SideDensity {
    fn new(sample: SideSample, order: usize, h: f64, kernel: Kernel) -> Result<Self> {
        let fit = PolyFit::new(&sample, &sample.y, order, h, kernel)?;
        Ok(SideDensity { fit, sample })
    }

    fn effective_n(&self) -> usize {
        self.fit.range.len()
    }

    /// Density at `x` (the slope of the fitted distribution function) and
    /// the weights `l_i` with `f(x) = sum_i l_i F_n(X_i)`.
    fn slope_at(&self, x: f64) -> (f64, Vec<f64>) {
        let h = self.fit.h;
        let t = (x - self.sample.cutoff) / h;
        // d/dx of sum_j beta_j t^j
        let a: Vec<f64> = (0..=self.fit.order).map(|j| if j == 0 { 0.0 } else { j as f64 * t.powi(j as i32 - 1) / h }).collect();
        let rows: Vec<Vec<f64>> = (1..=self.fit.order).map(|j| self.fit.equivalent_kernel(j)).collect();
        let ell: Vec<f64> = (0..self.fit.u.len()).map(|i| (1..=self.fit.order).map(|j| a[j] * rows[j - 1][i]).sum()).collect();
        let f = (1..=self.fit.order).map(|j| a[j] * self.fit.beta[j]).sum();
        (f, ell)
    }

    /// `g(z) = sum_{i: X_i >= z} l_i` evaluated at every score: the influence
    /// of each observation on the estimate through the distribution function.
    fn influence(&self, ell: &[f64], scores: &[f64]) -> Vec<f64> {
        let xs = &self.sample.x[self.fit.range.clone()];
        let mut suffix = vec![0.0; xs.len() + 1];
        for i in (0..xs.len()).rev() {
            suffix[i] = suffix[i + 1] + ell[i];
        }
        scores.iter().map(|&z| suffix[xs.partition_point(|&v| v < z)]).collect()
    }
}

fn centered_sum_sq(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    d.iter().map(|v| (v - m).powi(2)).sum()
}

fn side_sample_with_ecdf(data: &RdData, side: Side, ecdf: &Ecdf) -> SideSample {
    let mut s = data.side_sample(side).without_covariates();
    s.y = s.x.iter().map(|&x| ecdf.at(x)).collect();
    s
}

fn variance(d: &[f64], n: usize) -> f64 {
    centered_sum_sq(d) / (n as f64 * n as f64)
}

/// Derivative of order `k` of the distribution function at the cutoff from
/// a global polynomial of degree `k + 1` on one side.
fn cdf_derivative(s: &SideSample, k: usize) -> Result<f64> {
    let fit = PolyFit::new(s, &s.y, k + 1, s.range() * (1.0 + 1e-9), Kernel::Uniform)?;
    Ok(factorial(k) * fit.coefficients()[k])
}

/// Leading bias constant of the slope coefficient: the slope bias is
/// `h^order * F^(order+1) / (order+1)! * constant`.
fn slope_bias_constant(order: usize, kernel: Kernel) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let k = order + 1;
    let m = |d: usize| kernel.boundary_moment(d as u32);
    let gamma = DMatrix::from_fn(k, k, |i, j| m(i + j));
    let lambda = DVector::from_fn(k, |i, _| m(i + order + 1));
    match gamma.lu().solve(&lambda) {
        Some(v) => v[1],
        None => 0.0,
    }
}

fn select_bandwidth(data: &RdData, ecdf: &Ecdf, config: &DensityConfig) -> Result<(f64, f64)> {
    let left = side_sample_with_ecdf(data, Side::Left, ecdf);
    let right = side_sample_with_ecdf(data, Side::Right, ecdf);
    let n = data.n();
    let cap = left.range().max(right.range());
    let spread = sd(data.scores()).min(iqr_type2(data.scores()) / 1.349);
    let pilot = (config.kernel.pilot_constant() * spread * (n as f64).powf(-0.2)).min(cap);
    if !(pilot > 0.0) {
        return Err(RdError::DegeneratePilot("score has no spread".into()));
    }
    // pilot variance, scaled to other bandwidths by the 1/(n h) rate
    let mut var_h = 0.0;
    for s in [left.clone(), right.clone()] {
        let dens = SideDensity::new(s, config.order, pilot, config.kernel)?;
        let (_, ell) = dens.slope_at(data.cutoff());
        var_h += variance(&dens.influence(&ell, &ecdf.sorted), n) * pilot;
    }
    let p = config.order;
    let bconst = slope_bias_constant(p, config.kernel);
    let mut bias2 = 0.0;
    for s in [&left, &right] {
        bias2 += (bconst * cdf_derivative(s, p + 1)? / factorial(p + 1)).powi(2);
    }
    // minimizer of h^(2p) * bias2 + var_h / h
    let h = (var_h / (2.0 * p as f64 * bias2)).powf(1.0 / (2.0 * p as f64 + 1.0));
    let h = if h.is_finite() && h > 0.0 {
        h.min(cap)
    } else {
        log::warn!("density bias estimate is degenerate; using the full score range");
        cap
    };
    Ok((h, h))
}

pub fn density_test(data: &RdData, config: &DensityConfig) -> Result<DensityTestResult> {
    if config.order < 1 || config.order > 3 {
        return Err(RdError::InvalidInput(format!("density order {} must be 1, 2 or 3", config.order)));
    }
    let n_left = data.n() - data.scores().iter().filter(|&&x| x >= data.cutoff()).count();
    let n_right = data.n() - n_left;
    for (side, count) in [(Side::Left, n_left), (Side::Right, n_right)] {
        if count < MIN_SIDE {
            return Err(RdError::InsufficientObservations { side, needed: MIN_SIDE, found: count });
        }
    }
    let ecdf = Ecdf::new(data.scores());
    let n = ecdf.n();
    let (h_left, h_right) = match config.h {
        Some(h) => h,
        None => select_bandwidth(data, &ecdf, config)?,
    };
    let left = SideDensity::new(side_sample_with_ecdf(data, Side::Left, &ecdf), config.order, h_left, config.kernel)?;
    let right = SideDensity::new(side_sample_with_ecdf(data, Side::Right, &ecdf), config.order, h_right, config.kernel)?;
    let c = data.cutoff();
    let (f_left, ell_l) = left.slope_at(c);
    let (f_right, ell_r) = right.slope_at(c);
    let g_l = left.influence(&ell_l, &ecdf.sorted);
    let g_r = right.influence(&ell_r, &ecdf.sorted);
    let diff: Vec<f64> = g_r.iter().zip(&g_l).map(|(r, l)| r - l).collect();
    let se_left = variance(&g_l, n).sqrt();
    let se_right = variance(&g_r, n).sqrt();
    let se_difference = variance(&diff, n).sqrt();
    if !(se_difference > 0.0) {
        return Err(RdError::Numeric("density difference has zero estimated variance".into()));
    }
    let statistic = (f_right - f_left) / se_difference;
    let z = critical_value(config.level);

    let m = config.curve_points.max(2);
    let mut curve = Vec::with_capacity(2 * m);
    for (dens, side, h) in [(&left, Side::Left, h_left), (&right, Side::Right, h_right)] {
        let xs = &dens.sample.x[dens.fit.range.clone()];
        let far = match side {
            Side::Left => (c - h).max(xs[0]),
            Side::Right => (c + h).min(xs[xs.len() - 1]),
        };
        for k in 0..m {
            let x = c + (far - c) * k as f64 / (m - 1) as f64;
            let (f, ell) = dens.slope_at(x);
            let se = variance(&dens.influence(&ell, &ecdf.sorted), n).sqrt();
            curve.push(DensityPoint { side, x, f, lo: f - z * se, hi: f + z * se });
        }
    }
    curve.sort_by(|a, b| a.x.total_cmp(&b.x));

    Ok(DensityTestResult {
        statistic,
        p_value: two_sided_p(statistic),
        f_left,
        f_right,
        se_left,
        se_right,
        se_difference,
        h_left,
        h_right,
        n_left,
        n_right,
        effective_n_left: left.effective_n(),
        effective_n_right: right.effective_n(),
        order: config.order,
        kernel: config.kernel,
        curve,
    })
}
