//! Validation battery: covariate balance, density continuity, the binomial
//! window test, placebo cutoffs, donut-hole re-estimation and bandwidth
//! sensitivity. Reports carry evidence only; they never pass or fail a design.

mod binomial;
mod density;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{select_with, BandwidthSpec, Selector};
use crate::dataset::{window, RdData};
use crate::error::{RdError, Result};
use crate::inference::{analyze, EstimationConfig, Interval, RdEstimate};

pub use binomial::{binomial_p_value, binomial_window, BinomialTest};
pub use density::{density_test, DensityConfig, DensityPoint, DensityTestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    CovariateBalance,
    Density,
    Binomial,
    Placebo,
    Donut,
    Sensitivity,
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportKind::CovariateBalance => "covariate_balance",
            ReportKind::Density => "density",
            ReportKind::Binomial => "binomial",
            ReportKind::Placebo => "placebo",
            ReportKind::Donut => "donut",
            ReportKind::Sensitivity => "sensitivity",
        })
    }
}

/// One re-analysis. Exactly one of `estimate` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationRow {
    pub label: String,
    /// The varied quantity: cutoff, radius or bandwidth.
    pub parameter: Option<f64>,
    pub estimate: Option<RdEstimate>,
    pub error: Option<String>,
}

impl FalsificationRow {
    fn from_result(label: String, parameter: Option<f64>, result: Result<RdEstimate>) -> Self {
        match result {
            Ok(est) => FalsificationRow { label, parameter, estimate: Some(est), error: None },
            Err(e) => FalsificationRow { label, parameter, estimate: None, error: Some(e.to_string()) },
        }
    }

    pub fn tau_hat(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.tau_hat)
    }

    pub fn p_robust(&self) -> Option<f64> {
        self.estimate.as_ref().map(|e| e.p_robust)
    }

    pub fn ci_robust(&self) -> Option<Interval> {
        self.estimate.as_ref().map(|e| e.ci_robust)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub kind: ReportKind,
    pub rows: Vec<FalsificationRow>,
    pub verdict_notes: Vec<String>,
    pub binomial: Option<BinomialTest>,
    pub density: Option<DensityTestResult>,
}

impl FalsificationReport {
    fn with_rows(kind: ReportKind, rows: Vec<FalsificationRow>) -> Self {
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        let mut verdict_notes = Vec::new();
        if failed > 0 {
            verdict_notes.push(format!("{failed} of {} analyses could not be computed", rows.len()));
        }
        FalsificationReport { kind, rows, verdict_notes, binomial: None, density: None }
    }

    pub fn row(&self, label: &str) -> Option<&FalsificationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Treats each named covariate as an outcome and runs the full pipeline on
/// it, selecting a bandwidth per covariate.
pub fn covariate_balance(data: &RdData, columns: &[&str], config: &EstimationConfig) -> Result<FalsificationReport> {
    let cov = data.covariates().ok_or(RdError::MissingCovariates)?;
    let mut targets = Vec::with_capacity(columns.len());
    for name in columns {
        let j = cov.names.iter().position(|n| n == name).ok_or_else(|| RdError::MissingColumn(name.to_string()))?;
        targets.push((name.to_string(), cov.columns[j].clone()));
    }
    let base = data.clone().without_covariates();
    let config = EstimationConfig { covariates: false, ..config.clone() };
    let rows = targets
        .into_par_iter()
        .map(|(name, column)| {
            let result = base.with_outcomes(column).and_then(|d| analyze(&d, &config));
            FalsificationRow::from_result(name, None, result)
        })
        .collect();
    Ok(FalsificationReport::with_rows(ReportKind::CovariateBalance, rows))
}

/// Covariate balance on every attached covariate.
pub fn covariate_balance_all(data: &RdData, config: &EstimationConfig) -> Result<FalsificationReport> {
    let names: Vec<String> = data.covariates().ok_or(RdError::MissingCovariates)?.names.clone();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    covariate_balance(data, &refs, config)
}

pub fn binomial_report(data: &RdData, half_width: f64, prob: f64) -> Result<FalsificationReport> {
    let test = binomial_window(data, half_width, prob)?;
    let mut report = FalsificationReport::with_rows(ReportKind::Binomial, Vec::new());
    report.binomial = Some(test);
    Ok(report)
}

pub fn density_report(data: &RdData, config: &DensityConfig) -> Result<FalsificationReport> {
    let test = density_test(data, config)?;
    let mut report = FalsificationReport::with_rows(ReportKind::Density, Vec::new());
    report.density = Some(test);
    Ok(report)
}

/// Sample used for an artificial cutoff: only the side of the true cutoff
/// the placebo lies on, so treatment status is constant within it.
fn placebo_sample(data: &RdData, cutoff: f64) -> Result<RdData> {
    let c = data.cutoff();
    let rows: Vec<usize> = (0..data.n())
        .filter(|&i| if cutoff > c { data.is_treated(i) } else { !data.is_treated(i) })
        .collect();
    let restricted = data.select_rows(&rows)?;
    let x = restricted.scores();
    let below = x.iter().any(|&v| v < cutoff);
    let above = x.iter().any(|&v| v > cutoff);
    if !(below && above) {
        return Err(RdError::InvalidInput(format!("placebo cutoff {cutoff} is not interior to its side's support")));
    }
    restricted.with_cutoff(cutoff)
}

/// Effects at artificial cutoffs. A cutoff equal to the true one is analyzed
/// on the full sample as a benchmark.
pub fn placebo_cutoffs(data: &RdData, cutoffs: &[f64], config: &EstimationConfig) -> Result<FalsificationReport> {
    let rows = cutoffs
        .par_iter()
        .map(|&cut| {
            let result = if cut == data.cutoff() {
                analyze(data, config)
            } else {
                placebo_sample(data, cut).and_then(|d| analyze(&d, config))
            };
            FalsificationRow::from_result(format!("c={cut}"), Some(cut), result)
        })
        .collect();
    Ok(FalsificationReport::with_rows(ReportKind::Placebo, rows))
}

/// Re-estimation after dropping units with `|X - c| < r`, reselecting the
/// bandwidth each time.
pub fn donut(data: &RdData, radii: &[f64], config: &EstimationConfig) -> Result<FalsificationReport> {
    if let Some(r) = radii.iter().find(|r| !(**r >= 0.0)) {
        return Err(RdError::InvalidInput(format!("donut radius must be >= 0, got {r}")));
    }
    let rows = radii
        .par_iter()
        .map(|&r| {
            let result = window(data, f64::NEG_INFINITY, f64::INFINITY, Some(r)).and_then(|d| analyze(&d, config));
            FalsificationRow::from_result(format!("r={r}"), Some(r), result)
        })
        .collect();
    Ok(FalsificationReport::with_rows(ReportKind::Donut, rows))
}

/// The default grid `{h_CER, h_MSE, 2 h_CER, 2 h_MSE}` from the common
/// (`rd`) selectors.
pub fn default_sensitivity_grid(data: &RdData, config: &EstimationConfig) -> Result<Vec<f64>> {
    let (cer, mse) = rayon::join(
        || select_with(data, config, Selector::Cerrd),
        || select_with(data, config, Selector::Mserd),
    );
    let (cer, mse) = (cer?.h_left, mse?.h_left);
    Ok(vec![cer, mse, 2.0 * cer, 2.0 * mse])
}

/// Fixed-bandwidth re-analyses over a grid of `h`; the bias bandwidth keeps
/// the baseline run's ratio `h / b`.
pub fn bandwidth_sensitivity(
    data: &RdData,
    bandwidths: Option<&[f64]>,
    config: &EstimationConfig,
) -> Result<FalsificationReport> {
    let grid = match bandwidths {
        Some(g) => g.to_vec(),
        None => default_sensitivity_grid(data, config)?,
    };
    if let Some(h) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(RdError::InvalidInput(format!("bandwidths must be positive, got {h}")));
    }
    let baseline = analyze(data, config)?;
    let (rho_l, rho_r) = (baseline.bandwidths.rho_left, baseline.bandwidths.rho_right);
    let rows = grid
        .par_iter()
        .map(|&h| {
            let fixed = EstimationConfig {
                bandwidth: BandwidthSpec::Manual { h: (h, h), b: Some((h / rho_l, h / rho_r)) },
                rho: None,
                ..config.clone()
            };
            FalsificationRow::from_result(format!("h={h}"), Some(h), analyze(data, &fixed))
        })
        .collect();
    Ok(FalsificationReport::with_rows(ReportKind::Sensitivity, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> RdData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| v + if v >= 0.0 { 1.0 } else { 0.0 } + 0.3 * rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = x.iter().map(|&v| 0.5 * v + rng.random_range(-1.0..1.0)).collect();
        RdData::new(x, y, 0.0).unwrap().with_covariates(vec!["z".into()], vec![z]).unwrap()
    }

    #[test]
    fn true_cutoff_row_is_the_baseline() {
        let d = sample(800, 1).without_covariates();
        let config = EstimationConfig::default();
        let base = analyze(&d, &config).unwrap();
        let placebo = placebo_cutoffs(&d, &[0.0], &config).unwrap();
        assert_eq!(placebo.rows[0].estimate.as_ref(), Some(&base));
        let donut0 = donut(&d, &[0.0], &config).unwrap();
        assert_eq!(donut0.rows[0].estimate.as_ref(), Some(&base));
    }

    #[test]
    fn placebo_samples_have_constant_treatment() {
        let d = sample(1000, 2);
        let report = placebo_cutoffs(&d, &[-0.5, 0.5], &EstimationConfig::default()).unwrap();
        let split = crate::dataset::split(&d);
        let left_row = report.rows[0].estimate.as_ref().unwrap();
        assert_eq!(left_row.n_left + left_row.n_right, split.n_left);
        let right_row = report.rows[1].estimate.as_ref().unwrap();
        assert_eq!(right_row.n_left + right_row.n_right, split.n_right);
    }

    #[test]
    fn constant_outcome_placebos_are_zero() {
        let d = sample(600, 3);
        let d = d.with_outcomes(vec![4.0; 600]).unwrap();
        let config = EstimationConfig {
            bandwidth: BandwidthSpec::Manual { h: (0.3, 0.3), b: None },
            vce: crate::variance::Vce::Hc0,
            ..Default::default()
        };
        let report = placebo_cutoffs(&d, &[-0.5, 0.4], &config).unwrap();
        for row in &report.rows {
            assert!(row.tau_hat().unwrap().abs() < 1e-10, "{row:?}");
        }
    }

    #[test]
    fn row_errors_do_not_stop_the_batch() {
        let d = sample(500, 4);
        let report = placebo_cutoffs(&d, &[-5.0, -0.5], &EstimationConfig::default()).unwrap();
        assert!(report.rows[0].error.is_some());
        assert!(report.rows[1].estimate.is_some());
        assert_eq!(report.verdict_notes.len(), 1);
    }

    #[test]
    fn balance_on_noise_covariate() {
        let d = sample(1500, 5);
        let report = covariate_balance_all(&d, &EstimationConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].p_robust().unwrap() > 0.001);
        assert!(covariate_balance(&d, &["nope"], &EstimationConfig::default()).is_err());
    }

    #[test]
    fn sensitivity_default_grid_and_rho() {
        let d = sample(1500, 6).without_covariates();
        let config = EstimationConfig::default();
        let grid = default_sensitivity_grid(&d, &config).unwrap();
        assert!(grid[0] < grid[1]);
        assert_eq!(grid[2], 2.0 * grid[0]);
        let report = bandwidth_sensitivity(&d, None, &config).unwrap();
        let base = analyze(&d, &config).unwrap();
        for (row, h) in report.rows.iter().zip(&grid) {
            let bw = &row.estimate.as_ref().unwrap().bandwidths;
            assert_eq!(bw.h_left, *h);
            assert!((bw.rho_left - base.bandwidths.rho_left).abs() < 1e-12);
            let est = row.estimate.as_ref().unwrap();
            assert!((est.tau_hat - 1.0).abs() < 3.0 * est.se_conventional);
        }
    }

    #[test]
    fn donut_shrinks_sample() {
        let d = sample(800, 7).without_covariates();
        let report = donut(&d, &[0.0, 0.1], &EstimationConfig::default()).unwrap();
        let (a, b) = (report.rows[0].estimate.as_ref().unwrap(), report.rows[1].estimate.as_ref().unwrap());
        assert!(b.n_left + b.n_right < a.n_left + a.n_right);
        assert!(donut(&d, &[-1.0], &EstimationConfig::default()).is_err());
    }
}
