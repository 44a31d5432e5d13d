//! Result envelopes and plain-text tables. Tables are projections of the JSON
//! results and show numbers to three decimals.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandwidth::BandwidthResult;
use crate::error::{RdError, Result};
use crate::falsification::{DensityTestResult, FalsificationReport, ReportKind};
use crate::inference::{RdEstimate, Interval};
use crate::simlab::{DensityExperimentSummary, ExperimentSummary};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    /// SHA-256 of the input file, hex encoded.
    pub input_digest: Option<String>,
    pub version: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, input_digest: Option<String>, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            input_digest,
            version: TOOL_VERSION.to_string(),
            seed,
            timestamp: timestamp(),
        }
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub manifest: RunManifest,
    pub result: T,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| RdError::Numeric(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| RdError::Io { path: path.to_path_buf(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

fn ci(i: &Interval) -> String {
    format!("[{:.3}, {:.3}]", i.lo, i.hi)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let cols = self.header.len();
        let width: Vec<usize> = (0..cols)
            .map(|j| self.rows.iter().map(|r| r[j].len()).chain([self.header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| -> String {
            let mut s = String::new();
            for (j, c) in cells.iter().enumerate() {
                if j == 0 {
                    let _ = write!(s, "{c:<w$}", w = width[j]);
                } else {
                    let _ = write!(s, "  {c:>w$}", w = width[j]);
                }
            }
            s.trim_end().to_string()
        };
        let rule = "-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1));
        let mut out = String::new();
        out.push_str(&rule);
        out.push('\n');
        out.push_str(&line(&self.header));
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out
    }
}

/// Estimation summary; `all` adds the bias-corrected row.
pub fn estimate_table(e: &RdEstimate, all: bool) -> String {
    let mut out = String::new();
    let bw = &e.bandwidths;
    let mut head = Table::new(&["", "Left of c", "Right of c"]);
    head.push(vec!["Number of obs".into(), e.n_left.to_string(), e.n_right.to_string()]);
    head.push(vec!["Eff. number of obs".into(), e.effective_n_left.to_string(), e.effective_n_right.to_string()]);
    head.push(vec!["Order est. (p)".into(), e.p.to_string(), e.p.to_string()]);
    head.push(vec!["Order bias (q)".into(), e.q.to_string(), e.q.to_string()]);
    head.push(vec!["BW est. (h)".into(), f3(bw.h_left), f3(bw.h_right)]);
    head.push(vec!["BW bias (b)".into(), f3(bw.b_left), f3(bw.b_right)]);
    head.push(vec!["rho (h/b)".into(), f3(bw.rho_left), f3(bw.rho_right)]);
    let _ = writeln!(
        out,
        "Sharp RD estimates using local polynomial regression (cutoff {}, kernel {}, vce {}, bandwidth {})",
        e.cutoff, e.kernel, e.vce, bw.selector
    );
    out.push_str(&head.render());
    let level = format!("[{}% C.I.]", e.level);
    let mut t = Table::new(&["Method", "Coef.", "Std. Err.", "z", "P>|z|", &level]);
    t.push(vec![
        "Conventional".into(),
        f3(e.tau_hat),
        f3(e.se_conventional),
        f3(e.tau_hat / e.se_conventional),
        f3(e.p_conventional),
        ci(&e.ci_conventional),
    ]);
    if all {
        t.push(vec![
            "Bias-corrected".into(),
            f3(e.tau_bc),
            f3(e.se_conventional),
            f3(e.tau_bc / e.se_conventional),
            f3(two_sided(e.tau_bc / e.se_conventional)),
            ci(&e.ci_biascorrected),
        ]);
    }
    t.push(vec![
        "Robust".into(),
        "-".into(),
        "-".into(),
        f3(e.tau_bc / e.se_robust),
        f3(e.p_robust),
        ci(&e.ci_robust),
    ]);
    out.push_str(&t.render());
    if let (Some(names), Some(g)) = (&e.covariate_names, &e.covariate_gamma) {
        let mut c = Table::new(&["Covariate", "Coef."]);
        for (n, v) in names.iter().zip(g) {
            c.push(vec![n.clone(), f3(*v)]);
        }
        out.push_str(&c.render());
    }
    out
}

fn two_sided(t: f64) -> f64 {
    crate::inference::two_sided_p(t)
}

pub fn bandwidth_table(results: &[BandwidthResult]) -> String {
    let mut t = Table::new(&["Method", "h (left)", "h (right)", "b (left)", "b (right)"]);
    for r in results {
        t.push(vec![r.selector.to_string(), f3(r.h_left), f3(r.h_right), f3(r.b_left), f3(r.b_right)]);
    }
    t.render()
}

pub fn density_table(d: &DensityTestResult) -> String {
    let mut t = Table::new(&["", "Left of c", "Right of c"]);
    t.push(vec!["Number of obs".into(), d.n_left.to_string(), d.n_right.to_string()]);
    t.push(vec!["Eff. number of obs".into(), d.effective_n_left.to_string(), d.effective_n_right.to_string()]);
    t.push(vec!["Bandwidth".into(), f3(d.h_left), f3(d.h_right)]);
    t.push(vec!["Density".into(), f3(d.f_left), f3(d.f_right)]);
    t.push(vec!["Std. Err.".into(), f3(d.se_left), f3(d.se_right)]);
    let mut s = t.render();
    let _ = writeln!(s, "T = {}   P>|T| = {}", f3(d.statistic), f3(d.p_value));
    s
}

fn est_cells(r: &crate::falsification::FalsificationRow, f: impl Fn(&RdEstimate) -> Vec<String>, width: usize) -> Vec<String> {
    match (&r.estimate, &r.error) {
        (Some(e), _) => f(e),
        (None, Some(err)) => {
            let mut v = vec![format!("error: {err}")];
            v.resize(width, String::new());
            v
        }
        (None, None) => vec![String::new(); width],
    }
}

pub fn falsification_table(report: &FalsificationReport) -> String {
    let mut out = String::new();
    match report.kind {
        ReportKind::Binomial => {
            if let Some(b) = &report.binomial {
                let mut t = Table::new(&["Window", "N left", "N right", "Prob.", "p-value"]);
                t.push(vec![
                    format!("+/-{}", b.half_width),
                    b.n_left.to_string(),
                    b.n_right.to_string(),
                    f3(b.prob),
                    format!("{:.4}", b.p_value),
                ]);
                out.push_str(&t.render());
            }
        }
        ReportKind::Density => {
            if let Some(d) = &report.density {
                out.push_str(&density_table(d));
            }
        }
        kind => {
            let first = match kind {
                ReportKind::CovariateBalance => "Variable",
                ReportKind::Placebo => "Cutoff",
                ReportKind::Donut => "Donut radius",
                _ => "Bandwidth",
            };
            let mut t = Table::new(&[first, "h", "RD estimator", "Robust p", "Robust CI", "Eff. N left", "Eff. N right"]);
            for r in &report.rows {
                let label = match (kind, r.parameter) {
                    (ReportKind::CovariateBalance, _) | (_, None) => r.label.clone(),
                    (ReportKind::Sensitivity, Some(v)) => f3(v),
                    (_, Some(v)) => format!("{v}"),
                };
                let mut cells = vec![label];
                cells.extend(est_cells(
                    r,
                    |e| {
                        vec![
                            f3(e.bandwidths.h_left),
                            f3(e.tau_hat),
                            f3(e.p_robust),
                            ci(&e.ci_robust),
                            e.effective_n_left.to_string(),
                            e.effective_n_right.to_string(),
                        ]
                    },
                    6,
                ));
                t.push(cells);
            }
            out.push_str(&t.render());
        }
    }
    for note in &report.verdict_notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

pub fn experiment_table(s: &ExperimentSummary) -> String {
    let mut t = Table::new(&["DGP", "n", "reps", "failed", "bias", "sd", "rmse", "cov. conv.", "cov. bc", "cov. robust", "mean h"]);
    t.push(vec![
        s.dgp.clone(),
        s.n.to_string(),
        s.replications.to_string(),
        s.failed.to_string(),
        f3(s.bias),
        f3(s.sd),
        f3(s.rmse),
        f3(s.coverage.conventional),
        f3(s.coverage.bias_corrected),
        f3(s.coverage.robust),
        f3(s.mean_h_left),
    ]);
    t.render()
}

pub fn density_experiment_table(s: &DensityExperimentSummary) -> String {
    let mut t = Table::new(&["DGP", "n", "reps", "failed", "alpha", "rejection rate", "mean T"]);
    t.push(vec![
        s.dgp.clone(),
        s.n.to_string(),
        s.replications.to_string(),
        s.failed.to_string(),
        f3(s.alpha),
        f3(s.rejection_rate),
        f3(s.mean_statistic),
    ]);
    t.render()
}
