//! Plug-in bandwidth selection.
//!
//! Every selector follows the same three-stage recipe. A rule-of-thumb pilot
//! `c` sets the variance window. A preliminary bandwidth `d` estimates the
//! curvature used by the bias bandwidth `b`, and `b` in turn supplies the
//! curvature for the main bandwidth `h`. Each stage balances an estimated
//! squared bias (optionally regularized) against an estimated variance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{RdData, SideSample};
use crate::error::{RdError, Result};
use crate::inference::{prepare_covariates, side_samples, EstimationConfig};
use crate::kernels::Kernel;
use crate::linalg::spd_solve;
use crate::local_poly::{factorial, PolyFit};
use crate::variance::{fit_residuals, sandwich, Vce};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Mserd,
    Msetwo,
    Msesum,
    Msecomb1,
    Msecomb2,
    Cerrd,
    Certwo,
    Cersum,
    Cercomb1,
    Cercomb2,
    Manual,
}

impl Selector {
    pub const DATA_DRIVEN: [Selector; 10] = [
        Selector::Mserd,
        Selector::Msetwo,
        Selector::Msesum,
        Selector::Msecomb1,
        Selector::Msecomb2,
        Selector::Cerrd,
        Selector::Certwo,
        Selector::Cersum,
        Selector::Cercomb1,
        Selector::Cercomb2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Mserd => "mserd",
            Selector::Msetwo => "msetwo",
            Selector::Msesum => "msesum",
            Selector::Msecomb1 => "msecomb1",
            Selector::Msecomb2 => "msecomb2",
            Selector::Cerrd => "cerrd",
            Selector::Certwo => "certwo",
            Selector::Cersum => "cersum",
            Selector::Cercomb1 => "cercomb1",
            Selector::Cercomb2 => "cercomb2",
            Selector::Manual => "manual",
        }
    }

    pub fn is_cer(self) -> bool {
        matches!(
            self,
            Selector::Cerrd | Selector::Certwo | Selector::Cersum | Selector::Cercomb1 | Selector::Cercomb2
        )
    }

    /// The MSE selector a CER selector rescales.
    fn mse_base(self) -> Selector {
        match self {
            Selector::Cerrd => Selector::Mserd,
            Selector::Certwo => Selector::Msetwo,
            Selector::Cersum => Selector::Msesum,
            Selector::Cercomb1 => Selector::Msecomb1,
            Selector::Cercomb2 => Selector::Msecomb2,
            other => other,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Selector {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Selector::DATA_DRIVEN
            .into_iter()
            .chain([Selector::Manual])
            .find(|sel| sel.name() == lower)
            .ok_or_else(|| RdError::InvalidInput(format!("unknown bandwidth selector `{s}`")))
    }
}

/// How the main and bias bandwidths are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthSpec {
    Select(Selector),
    /// User bandwidths `(left, right)`; `b` defaults to `h`.
    Manual { h: (f64, f64), b: Option<(f64, f64)> },
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Select(Selector::Mserd)
    }
}

/// The estimated ingredients of the MSE expansion behind a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginQuantities {
    pub sigma2_left: f64,
    pub sigma2_right: f64,
    pub density_at_cutoff: f64,
    pub curvature_left: f64,
    pub curvature_right: f64,
    /// Leading bias constants; the side bias is `h^(p+1) * bias_*`.
    pub bias_left: f64,
    pub bias_right: f64,
    /// Leading variance constants; the side variance is `var_* / (n h)`.
    pub var_left: f64,
    pub var_right: f64,
    pub regularization: f64,
    pub pilot_bandwidths: PilotBandwidths,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotBandwidths {
    /// Rule-of-thumb variance window shared by all stages.
    pub c: f64,
    /// Preliminary bandwidths feeding the bias-bandwidth stage.
    pub d_left: f64,
    pub d_right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthResult {
    pub selector: Selector,
    pub h_left: f64,
    pub h_right: f64,
    pub b_left: f64,
    pub b_right: f64,
    pub rho_left: f64,
    pub rho_right: f64,
    /// Multiplier applied to the MSE bandwidth for CER selectors.
    pub cer_factor: Option<f64>,
    pub plugin: Option<PluginQuantities>,
}

impl BandwidthResult {
    pub fn manual(h: (f64, f64), b: Option<(f64, f64)>) -> Result<Self> {
        let b = b.unwrap_or(h);
        for v in [h.0, h.1, b.0, b.1] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RdError::InvalidInput(format!("bandwidths must be positive, got {v}")));
            }
        }
        Ok(BandwidthResult {
            selector: Selector::Manual,
            h_left: h.0,
            h_right: h.1,
            b_left: b.0,
            b_right: b.1,
            rho_left: h.0 / b.0,
            rho_right: h.1 / b.1,
            cer_factor: None,
            plugin: None,
        })
    }
}

/// `(V / (2(p+1)B^2 + R))^(1/(2p+3)) * n^(-1/(2p+3))`
pub fn mse_bandwidth_from_components(v: f64, b: f64, r: f64, p: usize, n: usize) -> Result<f64> {
    if !(v > 0.0) || !(r >= 0.0) || n == 0 {
        return Err(RdError::InvalidInput("need V > 0, R >= 0 and n >= 1".into()));
    }
    let denom = 2.0 * (p as f64 + 1.0) * b * b + r;
    if !(denom > 0.0) {
        return Err(RdError::BiasDegenerate);
    }
    let rate = 1.0 / (2.0 * p as f64 + 3.0);
    Ok((v / denom).powf(rate) * (n as f64).powf(-rate))
}

/// Rate adjustment turning an MSE-optimal bandwidth into a CER-optimal one.
pub fn cer_factor(n: usize, p: usize) -> f64 {
    let p = p as f64;
    (n as f64).powf(-p / ((3.0 + p) * (3.0 + 2.0 * p)))
}

/// Selector using the default variance estimator and no clustering.
pub fn select(
    data: &RdData,
    p: usize,
    q: usize,
    kernel: Kernel,
    selector: Selector,
    use_regularization: bool,
) -> Result<BandwidthResult> {
    let config = EstimationConfig {
        p,
        q: Some(q),
        kernel,
        scaleregul: if use_regularization { 1.0 } else { 0.0 },
        ..EstimationConfig::default()
    };
    select_with(data, &config, selector)
}

pub fn select_with(data: &RdData, config: &EstimationConfig, selector: Selector) -> Result<BandwidthResult> {
    if selector == Selector::Manual {
        return Err(RdError::InvalidInput("the manual selector carries user bandwidths; use BandwidthResult::manual".into()));
    }
    let engine = Engine::new(data, config)?;
    engine.run(&[selector]).map(|mut v| v.remove(0))
}

/// All ten data-driven selectors from one set of pilot computations.
pub fn select_all(data: &RdData, config: &EstimationConfig) -> Result<Vec<BandwidthResult>> {
    Engine::new(data, config)?.run(&Selector::DATA_DRIVEN)
}

/// Plug-in quantities behind the mserd choice.
pub fn estimate_plugin(data: &RdData, p: usize, kernel: Kernel, use_regularization: bool) -> Result<PluginQuantities> {
    let res = select(data, p, p + 1, kernel, Selector::Mserd, use_regularization)?;
    Ok(res.plugin.expect("data-driven selections carry plug-in quantities"))
}

#[derive(Debug, Clone, Copy, Default)]
struct Components {
    v: f64,
    b: f64,
    r: f64,
    rate: f64,
    bconst: f64,
    beta: f64,
    sigma2: f64,
}

struct Engine {
    left: SideSample,
    right: SideSample,
    n: usize,
    g: Option<usize>,
    names: Vec<String>,
    p: usize,
    q: usize,
    kernel: Kernel,
    vce: Vce,
    scale: f64,
    c_bw: f64,
    range_left: f64,
    range_right: f64,
    density: f64,
}

impl Engine {
    fn new(data: &RdData, config: &EstimationConfig) -> Result<Self> {
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
        let (left, right) = side_samples(data, config);
        let q = config.q();
        let needed = q + 3;
        for s in [&left, &right] {
            if s.len() == 0 {
                return Err(RdError::EmptySide { side: s.side });
            }
            if s.len() < needed {
                return Err(RdError::InsufficientObservations { side: s.side, needed, found: s.len() });
            }
        }
        let x = data.scores();
        let n = x.len();
        let spread = sd(x).min(iqr_type2(x) / 1.349);
        let range_left = left.range();
        let range_right = right.range();
        let bw_max = range_left.max(range_right);
        let c_bw = (config.kernel.pilot_constant() * spread * (n as f64).powf(-0.2)).min(bw_max);
        if !(c_bw > 0.0) {
            return Err(RdError::DegeneratePilot("score has zero spread".into()));
        }
        let c = data.cutoff();
        let in_pilot = x.iter().filter(|&&v| (v - c).abs() <= c_bw).count();
        if in_pilot == 0 {
            return Err(RdError::DegeneratePilot("no observations inside the pilot window".into()));
        }
        let density = in_pilot as f64 / (2.0 * n as f64 * c_bw);
        Ok(Engine {
            left,
            right,
            n,
            g: config.cluster.then(|| data.n_clusters()),
            names: data.covariates().map(|c| c.names.clone()).unwrap_or_default(),
            p: config.p,
            q,
            kernel: config.kernel,
            vce: config.vce,
            scale: config.scaleregul,
            c_bw,
            range_left,
            range_right,
            density,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn stage(&self, o: usize, nu: usize, o_b: usize, h_b: (f64, f64), scale: f64) -> Result<(Components, Components)> {
        let (l, r) = rayon::join(
            || side_components(&self.left, o, nu, o_b, self.c_bw, h_b.0, scale, self.kernel, self.vce),
            || side_components(&self.right, o, nu, o_b, self.c_bw, h_b.1, scale, self.kernel, self.vce),
        );
        let map = |e: ComponentError| match e {
            ComponentError::Collinear(j) => RdError::CollinearCovariate {
                column: self.names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
            },
            ComponentError::Rd(e) => e,
        };
        Ok((l.map_err(map)?, r.map_err(map)?))
    }

    fn bw_max(&self) -> f64 {
        self.range_left.max(self.range_right)
    }

    fn run(&self, selectors: &[Selector]) -> Result<Vec<BandwidthResult>> {
        let (p, q) = (self.p, self.q);
        let ranges = (self.range_left + 1e-8, self.range_right + 1e-8);
        let (dl, dr) = self.stage(q + 1, q + 1, q + 2, ranges, 0.0)?;

        let want = |s: Selector| selectors.iter().any(|x| x.mse_base() == s);
        let need_rd = want(Selector::Mserd) || want(Selector::Msecomb1) || want(Selector::Msecomb2);
        let need_sum = want(Selector::Msesum) || want(Selector::Msecomb1) || want(Selector::Msecomb2);
        let need_two = want(Selector::Msetwo) || want(Selector::Msecomb2);

        let cap = self.bw_max();
        let pooled = |l: &Components, r: &Components, sum: bool| -> f64 {
            let b = if sum { r.b + l.b } else { r.b - l.b };
            optimum(l.v + r.v, b * b + l.r + r.r, l.rate, cap)
        };
        let run_pooled = |sum: bool| -> Result<Fit> {
            let d = pooled(&dl, &dr, sum);
            let (bl, br) = self.stage(q, p + 1, q + 1, (d, d), self.scale)?;
            let b = pooled(&bl, &br, sum);
            let (hl, hr) = self.stage(p, 0, q, (b, b), self.scale)?;
            let h = pooled(&hl, &hr, sum);
            Ok(Fit { h: (h, h), b: (b, b), d: (d, d), comps: (hl, hr), bias_comps: (bl, br) })
        };
        let two = || -> Result<Fit> {
            let one = |c: &Components, cap: f64| optimum(c.v, c.b * c.b + c.r, c.rate, cap);
            let d = (one(&dl, self.range_left), one(&dr, self.range_right));
            let (bl, br) = self.stage(q, p + 1, q + 1, d, self.scale)?;
            let b = (one(&bl, self.range_left), one(&br, self.range_right));
            let (hl, hr) = self.stage(p, 0, q, b, self.scale)?;
            let h = (one(&hl, self.range_left), one(&hr, self.range_right));
            Ok(Fit { h, b, d, comps: (hl, hr), bias_comps: (bl, br) })
        };

        let rd = need_rd.then(|| run_pooled(false)).transpose()?;
        let sum = need_sum.then(|| run_pooled(true)).transpose()?;
        let tw = need_two.then(two).transpose()?;

        let cer = cer_factor(self.g.unwrap_or(self.n), p);
        selectors
            .iter()
            .map(|&sel| {
                let base = match sel.mse_base() {
                    Selector::Mserd => rd.clone().unwrap(),
                    Selector::Msesum => sum.clone().unwrap(),
                    Selector::Msetwo => tw.clone().unwrap(),
                    Selector::Msecomb1 => {
                        let (a, s) = (rd.as_ref().unwrap(), sum.as_ref().unwrap());
                        let pick = if a.h.0 <= s.h.0 { a } else { s };
                        Fit {
                            h: (a.h.0.min(s.h.0), a.h.1.min(s.h.1)),
                            b: (a.b.0.min(s.b.0), a.b.1.min(s.b.1)),
                            ..pick.clone()
                        }
                    }
                    Selector::Msecomb2 => {
                        let (a, s, t) = (rd.as_ref().unwrap(), sum.as_ref().unwrap(), tw.as_ref().unwrap());
                        Fit {
                            h: (median3(a.h.0, t.h.0, s.h.0), median3(a.h.1, t.h.1, s.h.1)),
                            b: (median3(a.b.0, t.b.0, s.b.0), median3(a.b.1, t.b.1, s.b.1)),
                            ..a.clone()
                        }
                    }
                    _ => unreachable!("manual selector rejected earlier"),
                };
                let factor = sel.is_cer().then_some(cer);
                let h = match factor {
                    Some(f) => (base.h.0 * f, base.h.1 * f),
                    None => base.h,
                };
                Ok(BandwidthResult {
                    selector: sel,
                    h_left: h.0,
                    h_right: h.1,
                    b_left: base.b.0,
                    b_right: base.b.1,
                    rho_left: h.0 / base.b.0,
                    rho_right: h.1 / base.b.1,
                    cer_factor: factor,
                    plugin: Some(self.plugin(&base)?),
                })
            })
            .collect()
    }

    fn plugin(&self, fit: &Fit) -> Result<PluginQuantities> {
        let (hl, hr) = &fit.comps;
        let p = self.p;
        let curv = |s: &SideSample, b: f64| -> Result<f64> {
            let f = PolyFit::new(s, &s.y, self.q, b, self.kernel)?;
            Ok(factorial(p + 1) * f.coefficients()[p + 1])
        };
        let n = self.n as f64;
        Ok(PluginQuantities {
            sigma2_left: hl.sigma2,
            sigma2_right: hr.sigma2,
            density_at_cutoff: self.density,
            curvature_left: curv(&self.left, fit.b.0)?,
            curvature_right: curv(&self.right, fit.b.1)?,
            bias_left: hl.bconst * hl.beta,
            bias_right: hr.bconst * hr.beta,
            var_left: n * hl.v,
            var_right: n * hr.v,
            regularization: hl.r + hr.r,
            pilot_bandwidths: PilotBandwidths { c: self.c_bw, d_left: fit.d.0, d_right: fit.d.1 },
        })
    }
}

#[derive(Debug, Clone)]
struct Fit {
    h: (f64, f64),
    b: (f64, f64),
    d: (f64, f64),
    comps: (Components, Components),
    #[allow(dead_code)]
    bias_comps: (Components, Components),
}

/// `(V / D)^rate`, falling back to `cap` when the bias term vanishes.
fn optimum(v: f64, denom: f64, rate: f64, cap: f64) -> f64 {
    let h = (v / denom).powf(rate);
    if h.is_finite() && h > 0.0 {
        h.min(cap)
    } else {
        if !(denom > 0.0) {
            log::warn!("bias term vanished in bandwidth selection; using the full support");
        }
        cap
    }
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    v[1]
}

pub(crate) fn sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Interquartile range with the averaged-inverse-ECDF quantile convention.
pub(crate) fn iqr_type2(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_type2(&s, 0.75) - quantile_type2(&s, 0.25)
}

fn quantile_type2(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let np = n as f64 * prob;
    let j = np.floor() as usize;
    if (np - np.floor()).abs() < 1e-12 {
        if j == 0 {
            sorted[0]
        } else {
            0.5 * (sorted[j - 1] + sorted[j.min(n - 1)])
        }
    } else {
        sorted[j.min(n - 1)]
    }
}

enum ComponentError {
    Collinear(usize),
    Rd(RdError),
}

impl From<RdError> for ComponentError {
    fn from(e: RdError) -> Self {
        ComponentError::Rd(e)
    }
}

/// Partial out the window polynomial from the covariates and outcome and
/// return the covariate coefficients.
pub(crate) fn side_gamma(fit: &PolyFit, s: &SideSample) -> std::result::Result<Vec<f64>, usize> {
    use nalgebra::{DMatrix, DVector};
    let dz = s.z.len();
    let r = fit.range.clone();
    let resid = |col: &[f64]| -> Vec<f64> {
        let beta = fit.solve(col);
        let f = &fit.design * beta;
        col[r.clone()].iter().zip(f.iter()).map(|(y, f)| y - f).collect()
    };
    let zt: Vec<Vec<f64>> = s.z.iter().map(|c| resid(c)).collect();
    let yt = resid(&s.y);
    let a = DMatrix::from_fn(dz, dz, |i, j| (0..yt.len()).map(|k| fit.w[k] * zt[i][k] * zt[j][k]).sum());
    let b = DVector::from_fn(dz, |i, _| (0..yt.len()).map(|k| fit.w[k] * zt[i][k] * yt[k]).sum());
    spd_solve(&a, &b).map(|g| g.iter().copied().collect())
}

pub(crate) fn adjusted_outcome(s: &SideSample, gamma: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|i| s.y[i] - s.z.iter().zip(gamma).map(|(z, g)| z[i] * g).sum::<f64>())
        .collect()
}

/// Leverage `r_i' G^{-1} r_i w_i` of each window observation.
pub(crate) fn leverage(fit: &PolyFit) -> Vec<f64> {
    (0..fit.u.len())
        .map(|i| {
            let row = fit.design.row(i);
            (row * &fit.inv_gram * row.transpose())[0] * fit.w[i]
        })
        .collect()
}

/// Residuals of `y` (full side vector) for a fit, per the variance estimator.
pub(crate) fn window_residuals(fit: &PolyFit, s: &SideSample, y: &[f64], vce: Vce) -> Result<Vec<f64>> {
    let r = fit.range.clone();
    let yw = &y[r.clone()];
    let fitted: Vec<f64> = match vce {
        Vce::Nn { .. } => Vec::new(),
        _ => (&fit.design * fit.solve(y)).iter().copied().collect(),
    };
    let hii = match vce {
        Vce::Hc2 | Vce::Hc3 => leverage(fit),
        _ => Vec::new(),
    };
    fit_residuals(&s.x[r], yw, &fitted, &hii, vce, fit.order + 1, s.side)
}

#[allow(clippy::too_many_arguments)]
fn side_components(
    s: &SideSample,
    o: usize,
    nu: usize,
    o_b: usize,
    h_v: f64,
    h_b: f64,
    scale: f64,
    kernel: Kernel,
    vce: Vce,
) -> std::result::Result<Components, ComponentError> {
    let fit_v = PolyFit::new(s, &s.y, o, h_v, kernel)?;
    let y: Vec<f64> = if s.z.is_empty() {
        s.y.clone()
    } else {
        let gamma = side_gamma(&fit_v, s).map_err(ComponentError::Collinear)?;
        adjusted_outcome(s, &gamma)
    };
    let clusters = |fit: &PolyFit| s.clusters.as_ref().map(|c| &c[fit.range.clone()]);

    let e_v = window_residuals(&fit_v, s, &y, vce)?;
    let l_nu = fit_v.equivalent_kernel(nu);
    let v_scaled = sandwich(&l_nu, &e_v, clusters(&fit_v), o + 1)?;
    let sigma2 = {
        let sw: f64 = fit_v.w.iter().sum();
        fit_v.w.iter().zip(&e_v).map(|(w, e)| w * e * e).sum::<f64>() / sw
    };

    let k = o + 1;
    let mut v = nalgebra::DVector::<f64>::zeros(k);
    for i in 0..fit_v.u.len() {
        let t = fit_v.w[i] * fit_v.u[i].powi(k as i32);
        for j in 0..k {
            v[j] += fit_v.design[(i, j)] * t;
        }
    }
    let bconst = (&fit_v.inv_gram * v)[nu];

    let fit_b = PolyFit::new(s, &y, o_b, h_b, kernel)?;
    let beta = fit_b.beta[o + 1] / h_b.powi((o + 1) as i32);
    let mut bwreg = 0.0;
    if scale > 0.0 {
        let e_b = window_residuals(&fit_b, s, &y, vce)?;
        let l = fit_b.equivalent_kernel(o + 1);
        let v_b = sandwich(&l, &e_b, clusters(&fit_b), o_b + 1)? / h_b.powi(2 * (o + 1) as i32);
        bwreg = 3.0 * bconst * bconst * v_b;
    }
    let m = 2.0 * (o + 1 - nu) as f64;
    Ok(Components {
        v: (2 * nu + 1) as f64 * h_v * v_scaled,
        b: m.sqrt() * bconst * beta,
        r: scale * m * bwreg,
        rate: 1.0 / (2 * o + 3) as f64,
        bconst,
        beta,
        sigma2,
    })
}
