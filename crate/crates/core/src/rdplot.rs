//! RD plots: binned local means on each side of the cutoff overlaid with
//! polynomial fits computed from the raw observations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{RdData, Side, SideSample};
use crate::error::{RdError, Result};
use crate::kernels::Kernel;
use crate::local_poly::PolyFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinScheme {
    /// Evenly spaced: equal-width bins.
    Es,
    /// Quantile spaced: (roughly) equal-count bins.
    Qs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinCriterion {
    Manual,
    /// Integrated-MSE optimal number of bins.
    Imse,
    /// Mimicking-variance number of bins.
    Mv,
}

impl FromStr for BinScheme {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "es" => Ok(BinScheme::Es),
            "qs" => Ok(BinScheme::Qs),
            other => Err(RdError::InvalidInput(format!("unknown bin scheme `{other}`"))),
        }
    }
}

/// Parse the combined selector names `es`, `qs`, `esmv`, `qsmv`
/// (`es`/`qs` select by IMSE).
pub fn parse_binselect(s: &str) -> Result<(BinScheme, BinCriterion)> {
    match s.to_ascii_lowercase().as_str() {
        "es" | "esimse" => Ok((BinScheme::Es, BinCriterion::Imse)),
        "qs" | "qsimse" => Ok((BinScheme::Qs, BinCriterion::Imse)),
        "esmv" => Ok((BinScheme::Es, BinCriterion::Mv)),
        "qsmv" => Ok((BinScheme::Qs, BinCriterion::Mv)),
        other => Err(RdError::InvalidInput(format!("unknown bin selector `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideBins {
    /// `J + 1` ordered edges; bins are `[e_j, e_{j+1})` except the last, closed.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `None` for empty bins.
    pub means: Vec<Option<f64>>,
    pub midpoints: Vec<f64>,
}

impl SideBins {
    pub fn j(&self) -> usize {
        self.counts.len()
    }
}

/// Weights on squared bias and variance under which the chosen number of
/// bins would be IMSE optimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedWeights {
    pub scale: f64,
    pub bias: f64,
    pub variance: f64,
}

impl ImpliedWeights {
    pub fn from_scale(scale: f64) -> Self {
        let s3 = scale.powi(3);
        ImpliedWeights { scale, bias: s3 / (1.0 + s3), variance: 1.0 / (1.0 + s3) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    pub scheme: BinScheme,
    pub selector: BinCriterion,
    pub j_left: usize,
    pub j_right: usize,
    pub left: SideBins,
    pub right: SideBins,
    pub implied_weights_left: Option<ImpliedWeights>,
    pub implied_weights_right: Option<ImpliedWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSelection {
    pub j_left: usize,
    pub j_right: usize,
    pub j_imse: (usize, usize),
    pub j_mv: (usize, usize),
    pub implied_weights_left: ImpliedWeights,
    pub implied_weights_right: ImpliedWeights,
}

/// How many bins to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinChoice {
    Manual(usize, usize),
    Select(BinCriterion),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotOptions {
    pub scheme: BinScheme,
    pub bins: BinChoice,
    pub order: usize,
    pub kernel: Kernel,
    /// Fit window `(h_left, h_right)`; the full side range when unset.
    pub window: Option<(f64, f64)>,
    /// Multiplier on selected bin counts (ignored for manual counts).
    pub scale: f64,
    /// Support `[x_l, x_u]` used for bin edges; observed extremes when unset.
    pub support: Option<(f64, f64)>,
    pub curve_points: usize,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            scheme: BinScheme::Es,
            bins: BinChoice::Select(BinCriterion::Mv),
            order: 4,
            kernel: Kernel::Uniform,
            window: None,
            scale: 1.0,
            support: None,
            curve_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPlotData {
    pub schema: String,
    pub cutoff: f64,
    pub partition: BinPartition,
    pub global_order: usize,
    pub kernel: Kernel,
    pub coefficients_left: Vec<f64>,
    pub coefficients_right: Vec<f64>,
    pub fit_window: (f64, f64),
    pub n_left: usize,
    pub n_right: usize,
    pub curve_left: Vec<(f64, f64)>,
    pub curve_right: Vec<(f64, f64)>,
}

impl RdPlotData {
    /// Difference of the two fitted curves at the cutoff.
    pub fn intercept_gap(&self) -> f64 {
        self.coefficients_right[0] - self.coefficients_left[0]
    }
}

pub const PLOT_SCHEMA: &str = "rdsharp.plot/1";

fn side_support(s: &SideSample, support: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let c = s.cutoff;
    let (lo, hi) = match s.side {
        Side::Left => (s.x.first().copied().ok_or(RdError::EmptySide { side: s.side })?, c),
        Side::Right => (c, s.x.last().copied().ok_or(RdError::EmptySide { side: s.side })?),
    };
    Ok(match (support, s.side) {
        (Some((l, _)), Side::Left) => (l.min(lo), hi),
        (Some((_, u)), Side::Right) => (lo, u.max(hi)),
        (None, _) => (lo, hi),
    })
}

fn side_bins(s: &SideSample, scheme: BinScheme, j: usize, support: Option<(f64, f64)>) -> Result<SideBins> {
    if j == 0 {
        return Err(RdError::InvalidInput(format!("need at least one bin on the {} side", s.side)));
    }
    let (lo, hi) = side_support(s, support)?;
    let n = s.len();
    let edges: Vec<f64> = match scheme {
        BinScheme::Es => (0..=j)
            .map(|k| if k == j { hi } else { lo + k as f64 * (hi - lo) / j as f64 })
            .collect(),
        BinScheme::Qs => {
            if j > n {
                return Err(RdError::InvalidInput(format!(
                    "{j} quantile bins exceed the {} observations on the {} side",
                    n, s.side
                )));
            }
            (0..=j)
                .map(|k| match k {
                    0 => lo,
                    k if k == j => hi,
                    k => s.x[k * n / j],
                })
                .collect()
        }
    };
    let mut counts = vec![0usize; j];
    let mut sums = vec![0.0; j];
    let inner = &edges[1..j];
    for (x, y) in s.x.iter().zip(&s.y) {
        let b = inner.partition_point(|e| e <= x).min(j - 1);
        counts[b] += 1;
        sums[b] += y;
    }
    let means = counts.iter().zip(&sums).map(|(&c, &s)| (c > 0).then(|| s / c as f64)).collect();
    let midpoints = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(SideBins { edges, counts, means, midpoints })
}

pub fn partition(data: &RdData, scheme: BinScheme, j_left: usize, j_right: usize) -> Result<BinPartition> {
    partition_with_support(data, scheme, j_left, j_right, None)
}

/// Like [`partition`], with a support wider than the observed scores.
pub fn partition_with_support(
    data: &RdData,
    scheme: BinScheme,
    j_left: usize,
    j_right: usize,
    support: Option<(f64, f64)>,
) -> Result<BinPartition> {
    let left = side_bins(&data.side_sample(Side::Left), scheme, j_left, support)?;
    let right = side_bins(&data.side_sample(Side::Right), scheme, j_right, support)?;
    Ok(BinPartition {
        scheme,
        selector: BinCriterion::Manual,
        j_left,
        j_right,
        left,
        right,
        implied_weights_left: None,
        implied_weights_right: None,
    })
}

struct SpacingStats {
    n_side: f64,
    var_y: f64,
    b_es: f64,
    v_es: f64,
    b_qs: f64,
    v_qs: f64,
}

const PILOT_ORDER: usize = 4;

fn spacing_stats(s: &SideSample, n_total: usize, support: Option<(f64, f64)>) -> Result<SpacingStats> {
    let n_side = s.len() as f64;
    let (lo, hi) = side_support(s, support)?;
    let range = hi - lo;
    let fit = PolyFit::new(s, &s.y, PILOT_ORDER, range * (1.0 + 1e-9), Kernel::Uniform)?;
    let coef = fit.coefficients();
    let deriv = |x: f64| -> f64 {
        let t = x - s.cutoff;
        (1..coef.len()).map(|j| j as f64 * coef[j] * t.powi(j as i32 - 1)).sum()
    };
    let n = n_total as f64;
    let mean_y = s.y.iter().sum::<f64>() / n_side;
    let var_y = s.y.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / (n_side - 1.0);
    let mut v_es = 0.0;
    let mut b_qs = 0.0;
    let mut v_qs = 0.0;
    for i in 1..s.len() {
        let dx = s.x[i] - s.x[i - 1];
        let dy = s.y[i] - s.y[i - 1];
        v_es += dx * dy * dy;
        b_qs += dx * dx * deriv(0.5 * (s.x[i] + s.x[i - 1])).powi(2);
        v_qs += dy * dy;
    }
    let b_es = range * range / (12.0 * n) * s.x.iter().map(|&x| deriv(x).powi(2)).sum::<f64>();
    Ok(SpacingStats {
        n_side,
        var_y,
        b_es,
        v_es: 0.5 / range * v_es,
        b_qs: n_side * n_side / (24.0 * n) * b_qs,
        v_qs: v_qs / (2.0 * n_side),
    })
}

fn ceil_count(v: f64) -> Result<usize> {
    if v.is_finite() && v > 0.0 {
        Ok((v.ceil() as usize).max(1))
    } else {
        Err(RdError::Numeric(format!("bin selector constant is not positive ({v})")))
    }
}

pub fn select_bins(data: &RdData, scheme: BinScheme, criterion: BinCriterion) -> Result<BinSelection> {
    select_bins_with_support(data, scheme, criterion, None)
}

pub fn select_bins_with_support(
    data: &RdData,
    scheme: BinScheme,
    criterion: BinCriterion,
    support: Option<(f64, f64)>,
) -> Result<BinSelection> {
    let n = data.n();
    let sides = [data.side_sample(Side::Left), data.side_sample(Side::Right)];
    let mut imse = [0usize; 2];
    let mut mv = [0usize; 2];
    for (k, s) in sides.iter().enumerate() {
        if s.len() < 10 {
            return Err(RdError::InsufficientObservations { side: s.side, needed: 10, found: s.len() });
        }
        let st = spacing_stats(s, n, support)?;
        let (b, v) = match scheme {
            BinScheme::Es => (st.b_es, st.v_es),
            BinScheme::Qs => (st.b_qs, st.v_qs),
        };
        imse[k] = ceil_count((2.0 * b / v * st.n_side).cbrt())?;
        let nf = n as f64;
        mv[k] = ceil_count(st.var_y / v * (nf / nf.ln().powi(2)))?;
    }
    let chosen = match criterion {
        BinCriterion::Mv => mv,
        _ => imse,
    };
    let w = |k: usize| ImpliedWeights::from_scale(chosen[k] as f64 / imse[k] as f64);
    Ok(BinSelection {
        j_left: chosen[0],
        j_right: chosen[1],
        j_imse: (imse[0], imse[1]),
        j_mv: (mv[0], mv[1]),
        implied_weights_left: w(0),
        implied_weights_right: w(1),
    })
}

pub fn build_plot(data: &RdData, options: &PlotOptions) -> Result<RdPlotData> {
    let left = data.side_sample(Side::Left);
    let right = data.side_sample(Side::Right);
    let (mut part, selected) = match options.bins {
        BinChoice::Manual(jl, jr) => (partition_with_support(data, options.scheme, jl, jr, options.support)?, None),
        BinChoice::Select(BinCriterion::Manual) => {
            return Err(RdError::InvalidInput("manual bin selection needs explicit counts".into()))
        }
        BinChoice::Select(crit) => {
            let sel = select_bins_with_support(data, options.scheme, crit, options.support)?;
            if !(options.scale > 0.0) {
                return Err(RdError::InvalidInput("bin scale must be positive".into()));
            }
            let jl = ((sel.j_left as f64 * options.scale).ceil() as usize).max(1);
            let jr = ((sel.j_right as f64 * options.scale).ceil() as usize).max(1);
            (partition_with_support(data, options.scheme, jl, jr, options.support)?, Some((crit, sel)))
        }
    };
    if let Some((crit, sel)) = selected {
        part.selector = crit;
        if crit == BinCriterion::Mv {
            part.implied_weights_left = Some(sel.implied_weights_left);
            part.implied_weights_right = Some(sel.implied_weights_right);
        }
    }

    let fit_side = |s: &SideSample, h: Option<f64>| -> Result<(Vec<f64>, f64)> {
        // slightly widen the default window so the farthest point stays inside
        let h = h.unwrap_or(s.range() * (1.0 + 1e-9));
        let fit = PolyFit::new(s, &s.y, options.order, h, options.kernel)?;
        Ok((fit.coefficients(), h))
    };
    let (coefficients_left, hl) = fit_side(&left, options.window.map(|w| w.0))?;
    let (coefficients_right, hr) = fit_side(&right, options.window.map(|w| w.1))?;
    let c = data.cutoff();
    let eval = |coef: &[f64], x: f64| coef.iter().enumerate().map(|(j, b)| b * (x - c).powi(j as i32)).sum::<f64>();
    let m = options.curve_points.max(2);
    let curve = |coef: &[f64], a: f64, b: f64| -> Vec<(f64, f64)> {
        (0..m)
            .map(|i| {
                let x = a + (b - a) * i as f64 / (m - 1) as f64;
                (x, eval(coef, x))
            })
            .collect()
    };
    let lo = (c - hl).max(left.x[0]);
    let hi = (c + hr).min(*right.x.last().expect("nonempty right side"));
    Ok(RdPlotData {
        schema: PLOT_SCHEMA.to_string(),
        cutoff: c,
        curve_left: curve(&coefficients_left, lo, c),
        curve_right: curve(&coefficients_right, c, hi),
        partition: part,
        global_order: options.order,
        kernel: options.kernel,
        coefficients_left,
        coefficients_right,
        fit_window: (hl, hr),
        n_left: left.len(),
        n_right: right.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFormat {
    Json,
    Csv,
    Svg,
}

impl FromStr for PlotFormat {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(PlotFormat::Json),
            "csv" => Ok(PlotFormat::Csv),
            "svg" => Ok(PlotFormat::Svg),
            other => Err(RdError::InvalidInput(format!("unknown plot format `{other}`"))),
        }
    }
}

pub fn render(plot: &RdPlotData, format: PlotFormat) -> Result<String> {
    match format {
        PlotFormat::Json => serde_json::to_string_pretty(plot).map_err(|e| RdError::Numeric(e.to_string())),
        PlotFormat::Csv => Ok(render_csv(plot)),
        PlotFormat::Svg => Ok(render_svg(plot)),
    }
}

pub fn export_plot(plot: &RdPlotData, format: PlotFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render(plot, format)?;
    fs::write(path, text).map_err(|source| RdError::Io { path: path.to_path_buf(), source })
}

fn render_csv(plot: &RdPlotData) -> String {
    let mut out = String::from("kind,side,x,y,count,lo,hi\n");
    for (side, bins) in [("left", &plot.partition.left), ("right", &plot.partition.right)] {
        for j in 0..bins.j() {
            let mean = bins.means[j].map_or("NA".to_string(), |m| format!("{m}"));
            let _ = writeln!(
                out,
                "bin,{side},{},{mean},{},{},{}",
                bins.midpoints[j],
                bins.counts[j],
                bins.edges[j],
                bins.edges[j + 1]
            );
        }
    }
    for (side, curve) in [("left", &plot.curve_left), ("right", &plot.curve_right)] {
        for (x, y) in curve {
            let _ = writeln!(out, "curve,{side},{x},{y},,,");
        }
    }
    out
}

pub const SVG_HEADER: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
pub const SVG_FOOTER: &str = "</svg>\n";

fn render_svg(plot: &RdPlotData) -> String {
    let (w, h, pad) = (640.0, 420.0, 40.0);
    let dots: Vec<(f64, f64)> = [&plot.partition.left, &plot.partition.right]
        .iter()
        .flat_map(|b| b.midpoints.iter().zip(&b.means).filter_map(|(x, m)| m.map(|m| (*x, m))))
        .collect();
    let all = dots.iter().chain(&plot.curve_left).chain(&plot.curve_right);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    for e in [&plot.partition.left.edges, &plot.partition.right.edges] {
        x0 = x0.min(e[0]);
        x1 = x1.max(*e.last().unwrap());
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut out = String::from(SVG_HEADER);
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let cx = sx(plot.cutoff);
    let _ = writeln!(
        out,
        "<line class=\"cutoff\" x1=\"{cx:.2}\" y1=\"{pad}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        h - pad
    );
    for (x, y) in &dots {
        let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f4e79\"/>", sx(*x), sy(*y));
    }
    for curve in [&plot.curve_left, &plot.curve_right] {
        let pts: Vec<String> = curve.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"#b22222\" stroke-width=\"2\"/>", pts.join(" "));
    }
    out.push_str(SVG_FOOTER);
    out
}
