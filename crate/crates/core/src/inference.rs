//! Point estimation, bias correction and the three confidence intervals.
//!
//! The conventional interval is centered at the local polynomial estimate and
//! uses its own standard error. The bias-corrected interval re-centers at the
//! estimate minus the estimated bias but keeps the conventional standard
//! error. The robust interval uses the same center and a standard error that
//! accounts for the variability of the bias estimate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bandwidth::{adjusted_outcome, select_with, BandwidthResult, BandwidthSpec};
use crate::dataset::{RdData, Side, SideSample};
use crate::error::{RdError, Result};
use crate::kernels::Kernel;
use crate::linalg::spd_solve;
use crate::local_poly::{kernel_window, PolyFit, MAX_ORDER};
use crate::variance::{fit_residuals, hc_residuals, nn_residuals, sandwich, Vce};

/// Everything needed to turn data into an [`RdEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Order of the main local polynomial.
    pub p: usize,
    /// Order of the bias-estimation polynomial; `p + 1` when unset.
    pub q: Option<usize>,
    pub kernel: Kernel,
    pub vce: Vce,
    pub bandwidth: BandwidthSpec,
    /// Scale of the regularization term; 0 disables it.
    pub scaleregul: f64,
    /// Confidence level in percent.
    pub level: f64,
    /// When set, the bias bandwidth becomes `b = h / rho`.
    pub rho: Option<f64>,
    /// Adjust for the covariates attached to the data.
    pub covariates: bool,
    /// Cluster-robust variance using the data's cluster labels.
    pub cluster: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            p: 1,
            q: None,
            kernel: Kernel::Triangular,
            vce: Vce::default(),
            bandwidth: BandwidthSpec::default(),
            scaleregul: 1.0,
            level: 95.0,
            rho: None,
            covariates: false,
            cluster: false,
        }
    }
}

impl EstimationConfig {
    pub fn q(&self) -> usize {
        self.q.unwrap_or(self.p + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > MAX_ORDER {
            return Err(RdError::InvalidInput(format!("p = {} exceeds the maximum of {MAX_ORDER}", self.p)));
        }
        if self.q() < self.p + 1 {
            return Err(RdError::InvalidInput(format!("q = {} must be at least p + 1 = {}", self.q(), self.p + 1)));
        }
        if self.q() > MAX_ORDER + 2 {
            return Err(RdError::InvalidInput(format!("q = {} is too large", self.q())));
        }
        if !(self.level > 0.0 && self.level < 100.0) {
            return Err(RdError::InvalidInput(format!("level must lie in (0, 100), got {}", self.level)));
        }
        if !(self.scaleregul >= 0.0 && self.scaleregul.is_finite()) {
            return Err(RdError::InvalidInput("scaleregul must be >= 0".into()));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(RdError::InvalidInput("rho must be positive".into()));
            }
        }
        if let Vce::Nn { k: 0 } = self.vce {
            return Err(RdError::InvalidInput("nearest-neighbor matches must be >= 1".into()));
        }
        Ok(())
    }

    /// Standard normal critical value for the configured level.
    pub fn z(&self) -> f64 {
        critical_value(self.level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdEstimate {
    pub tau_hat: f64,
    pub bias_hat: f64,
    pub tau_bc: f64,
    pub se_conventional: f64,
    pub se_robust: f64,
    pub ci_conventional: Interval,
    pub ci_biascorrected: Interval,
    pub ci_robust: Interval,
    pub p_conventional: f64,
    pub p_robust: f64,
    pub mu_left: f64,
    pub mu_right: f64,
    /// `mu - mu_bc` on each side; `bias_hat = bias_right - bias_left`.
    pub bias_left: f64,
    pub bias_right: f64,
    pub bandwidths: BandwidthResult,
    pub effective_n_left: usize,
    pub effective_n_right: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub vce: String,
    pub covariate_names: Option<Vec<String>>,
    pub covariate_gamma: Option<Vec<f64>>,
    pub p: usize,
    pub q: usize,
    pub kernel: Kernel,
    pub level: f64,
    pub cutoff: f64,
}

/// Per-side and total bias estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasEstimate {
    pub total: f64,
    pub left: f64,
    pub right: f64,
}

pub fn critical_value(level: f64) -> f64 {
    let alpha = 1.0 - level / 100.0;
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided standard normal p-value.
pub fn two_sided_p(t: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    (2.0 * Normal::standard().sf(t.abs())).min(1.0)
}

/// `(tau - bias) +/- z * se_robust`
pub fn robust_ci(point: f64, bias: f64, se_robust: f64, level: f64) -> Interval {
    let z = critical_value(level);
    let c = point - bias;
    Interval { lo: c - z * se_robust, hi: c + z * se_robust }
}

pub fn analyze(data: &RdData, config: &EstimationConfig) -> Result<RdEstimate> {
    config.validate()?;
    let prepared;
    let data = if config.covariates {
        prepared = prepare_covariates(data)?;
        &prepared
    } else {
        data
    };
    if config.cluster && data.clusters().is_none() {
        return Err(RdError::MissingClusters);
    }
    let config = &EstimationConfig { covariates: config.covariates && data.covariates().is_some(), ..config.clone() };

    let mut bw = match config.bandwidth {
        BandwidthSpec::Manual { h, b } => {
            let b = b.or_else(|| config.rho.map(|r| (h.0 / r, h.1 / r)));
            BandwidthResult::manual(h, b)?
        }
        BandwidthSpec::Select(sel) => select_with(data, config, sel)?,
    };
    if let (Some(rho), BandwidthSpec::Select(_)) = (config.rho, config.bandwidth) {
        bw.b_left = bw.h_left / rho;
        bw.b_right = bw.h_right / rho;
        bw.rho_left = rho;
        bw.rho_right = rho;
    }

    let (left, right) = side_samples(data, config);
    let q = config.q();
    let gamma = if config.covariates {
        Some(pooled_gamma(&left, &right, config.p, (bw.h_left, bw.h_right), config.kernel, data)?)
    } else {
        None
    };
    let adjust = |s: &SideSample| match &gamma {
        Some(g) => adjusted_outcome(s, g),
        None => s.y.clone(),
    };
    let (yl, yr) = (adjust(&left), adjust(&right));
    let (el, er) = rayon::join(
        || side_estimate(&left, &yl, config.p, q, bw.h_left, bw.b_left, config.kernel, config.vce),
        || side_estimate(&right, &yr, config.p, q, bw.h_right, bw.b_right, config.kernel, config.vce),
    );
    let (el, er) = (el?, er?);

    let tau_hat = er.mu - el.mu;
    let bias_hat = er.bias - el.bias;
    let tau_bc = tau_hat - bias_hat;
    let se_conventional = (el.v_cl + er.v_cl).sqrt();
    let se_robust = (el.v_rb + er.v_rb).sqrt();
    let z = config.z();
    let around = |c: f64, se: f64| Interval { lo: c - z * se, hi: c + z * se };
    let mut vce = config.vce.to_string();
    if config.cluster {
        vce.push_str("+cluster");
    }
    Ok(RdEstimate {
        tau_hat,
        bias_hat,
        tau_bc,
        se_conventional,
        se_robust,
        ci_conventional: around(tau_hat, se_conventional),
        ci_biascorrected: around(tau_bc, se_conventional),
        ci_robust: robust_ci(tau_hat, bias_hat, se_robust, config.level),
        p_conventional: two_sided_p(tau_hat / se_conventional),
        p_robust: two_sided_p(tau_bc / se_robust),
        mu_left: el.mu,
        mu_right: er.mu,
        bias_left: el.bias,
        bias_right: er.bias,
        bandwidths: bw,
        effective_n_left: el.n_h,
        effective_n_right: er.n_h,
        n_left: left.len(),
        n_right: right.len(),
        vce,
        covariate_names: gamma.as_ref().and_then(|_| data.covariates().map(|c| c.names.clone())),
        covariate_gamma: gamma,
        p: config.p,
        q,
        kernel: config.kernel,
        level: config.level,
        cutoff: data.cutoff(),
    })
}

pub fn analyze_with_covariates(data: &RdData, config: &EstimationConfig) -> Result<RdEstimate> {
    if data.covariates().is_none() {
        return Err(RdError::MissingCovariates);
    }
    analyze(data, &EstimationConfig { covariates: true, ..config.clone() })
}

pub fn analyze_clustered(data: &RdData, config: &EstimationConfig) -> Result<RdEstimate> {
    if data.clusters().is_none() {
        return Err(RdError::MissingClusters);
    }
    analyze(data, &EstimationConfig { cluster: true, ..config.clone() })
}

/// Bias of the local polynomial estimate, estimated with an order-`q` fit at
/// bias bandwidths `b`. The main bandwidths `h` enter through the leading
/// bias constant of the order-`p` fit.
#[allow(clippy::too_many_arguments)]
pub fn bias_estimate(
    data: &RdData,
    p: usize,
    q: usize,
    h_left: f64,
    h_right: f64,
    b_left: f64,
    b_right: f64,
    kernel: Kernel,
) -> Result<BiasEstimate> {
    if q < p + 1 {
        return Err(RdError::InvalidInput(format!("q = {q} must be at least p + 1")));
    }
    let one = |side: Side, h: f64, b: f64| -> Result<f64> {
        let s = data.side_sample(side).without_covariates();
        let fit_p = PolyFit::new(&s, &s.y, p, h, kernel)?;
        let fit_q = PolyFit::new(&s, &s.y, q, b, kernel)?;
        Ok((h / b).powi(p as i32 + 1) * leading_bias_constant(&fit_p) * fit_q.beta[p + 1])
    };
    let left = one(Side::Left, h_left, b_left)?;
    let right = one(Side::Right, h_right, b_right)?;
    Ok(BiasEstimate { total: right - left, left, right })
}

/// Drop constant covariate columns (with a warning) and reject collinear sets.
pub(crate) fn prepare_covariates(data: &RdData) -> Result<RdData> {
    let cov = data.covariates().ok_or(RdError::MissingCovariates)?;
    let mut names = Vec::new();
    let mut cols = Vec::new();
    for (name, col) in cov.names.iter().zip(&cov.columns) {
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if lo == hi {
            log::warn!("covariate `{name}` is constant and was dropped");
        } else {
            names.push(name.clone());
            cols.push(col.clone());
        }
    }
    if cols.is_empty() {
        return Ok(data.clone().without_covariates());
    }
    let n = data.n() as f64;
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n;
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let k = cols.len();
    let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum());
    if let Err(j) = spd_solve(&gram, &nalgebra::DVector::zeros(k)) {
        return Err(RdError::CollinearCovariate { column: names[j].clone() });
    }
    data.clone().with_covariates(names, cols)
}

pub(crate) fn side_samples(data: &RdData, config: &EstimationConfig) -> (SideSample, SideSample) {
    let strip = |s: SideSample| {
        let s = if config.covariates { s } else { s.without_covariates() };
        if config.cluster {
            s
        } else {
            SideSample { clusters: None, ..s }
        }
    };
    (strip(data.side_sample(Side::Left)), strip(data.side_sample(Side::Right)))
}

/// Covariate coefficients from the pooled fit with side-specific polynomials
/// and common covariate slopes.
fn pooled_gamma(
    left: &SideSample,
    right: &SideSample,
    p: usize,
    h: (f64, f64),
    kernel: Kernel,
    data: &RdData,
) -> Result<Vec<f64>> {
    let dz = left.z.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(dz, dz);
    let mut b = nalgebra::DVector::<f64>::zeros(dz);
    for (s, h) in [(left, h.0), (right, h.1)] {
        let fit = PolyFit::new(s, &s.y, p, h, kernel)?;
        let resid = |col: &[f64]| -> Vec<f64> {
            let f = &fit.design * fit.solve(col);
            col[fit.range.clone()].iter().zip(f.iter()).map(|(y, f)| y - f).collect()
        };
        let zt: Vec<Vec<f64>> = s.z.iter().map(|c| resid(c)).collect();
        let yt = resid(&s.y);
        for i in 0..dz {
            b[i] += (0..yt.len()).map(|k| fit.w[k] * zt[i][k] * yt[k]).sum::<f64>();
            for j in 0..dz {
                a[(i, j)] += (0..yt.len()).map(|k| fit.w[k] * zt[i][k] * zt[j][k]).sum::<f64>();
            }
        }
    }
    spd_solve(&a, &b).map(|g| g.iter().copied().collect()).map_err(|j| RdError::CollinearCovariate {
        column: data.covariates().map(|c| c.names[j].clone()).unwrap_or_else(|| format!("#{j}")),
    })
}

/// `(G_p^{-1} L)[0]` with `L = sum R_p w u^(p+1)`, in scaled coordinates.
fn leading_bias_constant(fit: &PolyFit) -> f64 {
    let k = fit.order + 1;
    let mut l = nalgebra::DVector::<f64>::zeros(k);
    for i in 0..fit.u.len() {
        let t = fit.w[i] * fit.u[i].powi(k as i32);
        for j in 0..k {
            l[j] += fit.design[(i, j)] * t;
        }
    }
    (&fit.inv_gram * l)[0]
}

struct SideEstimate {
    mu: f64,
    bias: f64,
    v_cl: f64,
    v_rb: f64,
    n_h: usize,
}

#[allow(clippy::too_many_arguments)]
fn side_estimate(
    s: &SideSample,
    y: &[f64],
    p: usize,
    q: usize,
    h: f64,
    b: f64,
    kernel: Kernel,
    vce: Vce,
) -> Result<SideEstimate> {
    let fit_p = PolyFit::new(s, y, p, h, kernel)?;
    let fit_q = PolyFit::new(s, y, q, b, kernel)?;
    let e = kernel_window(s, h.max(b), kernel);
    let n_e = e.len();
    let offset = |r: &std::ops::Range<usize>| r.start - e.start;

    let mut l = vec![0.0; n_e];
    for (i, v) in fit_p.equivalent_kernel(0).into_iter().enumerate() {
        l[offset(&fit_p.range) + i] = v;
    }
    let scale = (h / b).powi(p as i32 + 1) * leading_bias_constant(&fit_p);
    let mut l_bc = l.clone();
    for (i, m) in fit_q.equivalent_kernel(p + 1).into_iter().enumerate() {
        l_bc[offset(&fit_q.range) + i] -= scale * m;
    }
    let mu = fit_p.beta[0];
    let bias = scale * fit_q.beta[p + 1];

    let xe = &s.x[e.clone()];
    let ye = &y[e.clone()];
    let (res_h, res_b) = match vce {
        Vce::Nn { k } => {
            let r = nn_residuals(xe, ye, k, s.side)?;
            (r.clone(), r)
        }
        _ => {
            let eval = |fit: &PolyFit, hh: f64| -> Vec<f64> {
                xe.iter()
                    .map(|x| {
                        let u = (x - s.cutoff) / hh;
                        fit.beta.iter().enumerate().map(|(j, c)| c * u.powi(j as i32)).sum()
                    })
                    .collect()
            };
            let mut hii = vec![0.0; n_e];
            for (i, v) in crate::bandwidth::leverage(&fit_p).into_iter().enumerate() {
                hii[offset(&fit_p.range) + i] = v;
            }
            let rh = fit_residuals(xe, ye, &eval(&fit_p, h), &hii, vce, p + 1, s.side)?;
            let rb = hc_residuals(ye, &eval(&fit_q, b), &hii, vce, q + 1);
            (rh, rb)
        }
    };
    let clusters = s.clusters.as_ref().map(|c| &c[e.clone()]);
    Ok(SideEstimate {
        mu,
        bias,
        v_cl: sandwich(&l, &res_h, clusters, p + 1)?,
        v_rb: sandwich(&l_bc, &res_b, clusters, p + 1)?,
        n_h: fit_p.range.len(),
    })
}
