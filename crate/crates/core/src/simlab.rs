//! Simulated regression discontinuity designs and a Monte Carlo runner.
//!
//! Every replication draws from its own stream of a ChaCha8 generator keyed
//! by the design's seed, so results do not depend on scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RdData;
use crate::error::{RdError, Result};
use crate::falsification::{density_test, DensityConfig};
use crate::inference::{analyze, EstimationConfig, RdEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ScoreDistribution {
    Uniform { lo: f64, hi: f64 },
    /// `lo + (hi - lo) * Beta(alpha, beta)`.
    Beta { alpha: f64, beta: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum NoiseSpec {
    Constant { sigma: f64 },
    /// `sigma * (1 + slope * |x - c|)`.
    Heteroskedastic { sigma: f64, slope: f64 },
}

impl NoiseSpec {
    fn scale(&self, distance: f64) -> f64 {
        match *self {
            NoiseSpec::Constant { sigma } => sigma,
            NoiseSpec::Heteroskedastic { sigma, slope } => sigma * (1.0 + slope * distance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub clusters: usize,
    /// Share of the noise variance that is common within a cluster.
    pub icc: f64,
}

/// Each score landing in `[c - width, c)` is reflected to `2c - x` with
/// probability `share`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manipulation {
    pub share: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    pub cutoff: f64,
    pub score: ScoreDistribution,
    /// `mu_-(x) = sum_j left[j] (x - c)^j`.
    pub left: Vec<f64>,
    /// `mu_+(x) = mu_-(c) + tau + sum_j right_slopes[j] (x - c)^(j + 1)`.
    pub right_slopes: Vec<f64>,
    pub tau: f64,
    pub noise: NoiseSpec,
    pub clusters: Option<ClusterSpec>,
    pub manipulation: Option<Manipulation>,
    pub seed: u64,
}

impl DgpSpec {
    pub const PRESETS: [&'static str; 3] = ["linear", "curved", "manipulated"];

    pub fn preset(name: &str) -> Result<Self> {
        let base = DgpSpec {
            name: name.to_string(),
            cutoff: 0.0,
            score: ScoreDistribution::Uniform { lo: -1.0, hi: 1.0 },
            left: vec![0.0, 1.0],
            right_slopes: vec![1.0],
            tau: 1.0,
            noise: NoiseSpec::Constant { sigma: 0.1 },
            clusters: None,
            manipulation: None,
            seed: 20_240_601,
        };
        match name {
            "linear" => Ok(base),
            "curved" => Ok(DgpSpec {
                score: ScoreDistribution::Beta { alpha: 2.0, beta: 4.0, lo: -1.0, hi: 1.0 },
                left: vec![0.48, 1.27, 7.18, 20.21, 21.54],
                right_slopes: vec![0.84, -3.00, 7.99, -9.01],
                tau: 0.04,
                noise: NoiseSpec::Constant { sigma: 0.1295 },
                ..base
            }),
            "manipulated" => Ok(DgpSpec {
                manipulation: Some(Manipulation { share: 0.2, width: 0.2 }),
                ..base
            }),
            other => Err(RdError::InvalidInput(format!(
                "unknown preset `{other}` (expected one of {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RdError::InvalidInput(msg));
        match self.score {
            ScoreDistribution::Uniform { lo, hi } | ScoreDistribution::Beta { lo, hi, .. } if !(lo < hi) => {
                return bad(format!("score support [{lo}, {hi}] is empty"));
            }
            ScoreDistribution::Beta { alpha, beta, .. } if !(alpha > 0.0 && beta > 0.0) => {
                return bad("beta shape parameters must be positive".into());
            }
            _ => {}
        }
        let (lo, hi) = self.support();
        if !(lo < self.cutoff && self.cutoff < hi) {
            return bad(format!("cutoff {} outside the score support", self.cutoff));
        }
        if self.left.is_empty() {
            return bad("left polynomial needs at least an intercept".into());
        }
        match self.noise {
            NoiseSpec::Constant { sigma } if !(sigma >= 0.0) => return bad("noise scale must be >= 0".into()),
            NoiseSpec::Heteroskedastic { sigma, slope } if !(sigma >= 0.0 && slope >= 0.0) => {
                return bad("noise scale and slope must be >= 0".into())
            }
            _ => {}
        }
        if let Some(c) = self.clusters {
            if c.clusters < 2 || !(0.0..=1.0).contains(&c.icc) {
                return bad("clusters need at least 2 groups and icc in [0, 1]".into());
            }
        }
        if let Some(m) = self.manipulation {
            if !(0.0..=1.0).contains(&m.share) || !(m.width > 0.0) {
                return bad("manipulation share must be in [0, 1] and width > 0".into());
            }
        }
        let all = self.left.iter().chain(&self.right_slopes).chain([&self.tau, &self.cutoff]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("DGP coefficients must be finite".into());
        }
        Ok(())
    }

    fn support(&self) -> (f64, f64) {
        match self.score {
            ScoreDistribution::Uniform { lo, hi } | ScoreDistribution::Beta { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn mu_left(&self, x: f64) -> f64 {
        let t = x - self.cutoff;
        self.left.iter().rev().fold(0.0, |acc, b| acc * t + b)
    }

    pub fn mu_right(&self, x: f64) -> f64 {
        let t = x - self.cutoff;
        let slopes = self.right_slopes.iter().rev().fold(0.0, |acc, b| acc * t + b);
        self.left[0] + self.tau + t * slopes
    }

    /// Conditional mean of the outcome given the score.
    pub fn mean(&self, x: f64) -> f64 {
        if x >= self.cutoff {
            self.mu_right(x)
        } else {
            self.mu_left(x)
        }
    }
}

fn draw(spec: &DgpSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<RdData> {
    let c = spec.cutoff;
    let beta = match spec.score {
        ScoreDistribution::Beta { alpha, beta, .. } => {
            Some(Beta::new(alpha, beta).map_err(|e| RdError::InvalidInput(e.to_string()))?)
        }
        ScoreDistribution::Uniform { .. } => None,
    };
    let (lo, hi) = spec.support();
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = match &beta {
            Some(b) => lo + (hi - lo) * b.sample(rng),
            None => rng.random_range(lo..hi),
        };
        if let Some(m) = spec.manipulation {
            if v < c && v >= c - m.width && rng.random::<f64>() < m.share {
                v = 2.0 * c - v;
            }
        }
        x.push(v);
    }
    let ids: Option<Vec<usize>> = spec.clusters.map(|cs| (0..n).map(|_| rng.random_range(0..cs.clusters)).collect());
    let effects: Option<Vec<f64>> =
        spec.clusters.map(|cs| (0..cs.clusters).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let icc = spec.clusters.map_or(0.0, |cs| cs.icc);
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let eps: f64 = rng.sample(StandardNormal);
            let common = match (&ids, &effects) {
                (Some(ids), Some(fx)) => fx[ids[i]],
                _ => 0.0,
            };
            let shock = icc.sqrt() * common + (1.0 - icc).sqrt() * eps;
            spec.mean(v) + spec.noise.scale((v - c).abs()) * shock
        })
        .collect();
    let data = RdData::new(x, y, c)?;
    match ids {
        Some(ids) => data.with_cluster_ids(ids),
        None => Ok(data),
    }
}

fn replication_rng(spec: &DgpSpec, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replication);
    rng
}

/// One sample of size `n`; identical for identical specs.
pub fn generate(spec: &DgpSpec, n: usize) -> Result<RdData> {
    generate_replication(spec, n, 0)
}

/// The sample used by replication `replication` of an experiment.
pub fn generate_replication(spec: &DgpSpec, n: usize, replication: u64) -> Result<RdData> {
    spec.validate()?;
    if n == 0 {
        return Err(RdError::InvalidInput("sample size must be at least 1".into()));
    }
    draw(spec, n, &mut replication_rng(spec, replication))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub conventional: f64,
    pub bias_corrected: f64,
    pub robust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub dgp: String,
    pub n: usize,
    pub replications: usize,
    pub failed: usize,
    pub tau: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub coverage: CoverageSummary,
    pub mean_ci_length_robust: f64,
    pub mean_h_left: f64,
    pub mean_h_right: f64,
    /// First failure message, if any replication failed.
    pub first_error: Option<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

fn check_reps(replications: usize) -> Result<()> {
    if replications == 0 {
        return Err(RdError::InvalidInput("need at least one replication".into()));
    }
    Ok(())
}

/// Runs `analyze` on `replications` independent samples and summarizes the
/// sampling behaviour of the point estimate and the three intervals.
pub fn run_experiment(
    spec: &DgpSpec,
    n: usize,
    replications: usize,
    config: &EstimationConfig,
) -> Result<ExperimentSummary> {
    spec.validate()?;
    check_reps(replications)?;
    let results: Vec<Result<RdEstimate>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| generate_replication(spec, n, r).and_then(|d| analyze(&d, config)))
        .collect();
    let first_error = results.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
    let ok: Vec<&RdEstimate> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(RdError::Numeric(format!(
            "all {replications} replications failed: {}",
            first_error.unwrap_or_default()
        )));
    }
    let tau = spec.tau;
    let mean_estimate = mean(ok.iter().map(|e| e.tau_hat));
    let var = if ok.len() > 1 {
        ok.iter().map(|e| (e.tau_hat - mean_estimate).powi(2)).sum::<f64>() / (ok.len() - 1) as f64
    } else {
        0.0
    };
    let share = |f: &dyn Fn(&RdEstimate) -> bool| ok.iter().filter(|e| f(e)).count() as f64 / ok.len() as f64;
    Ok(ExperimentSummary {
        dgp: spec.name.clone(),
        n,
        replications,
        failed: replications - ok.len(),
        tau,
        mean_estimate,
        bias: mean_estimate - tau,
        sd: var.sqrt(),
        rmse: mean(ok.iter().map(|e| (e.tau_hat - tau).powi(2))).sqrt(),
        coverage: CoverageSummary {
            conventional: share(&|e| e.ci_conventional.contains(tau)),
            bias_corrected: share(&|e| e.ci_biascorrected.contains(tau)),
            robust: share(&|e| e.ci_robust.contains(tau)),
        },
        mean_ci_length_robust: mean(ok.iter().map(|e| e.ci_robust.width())),
        mean_h_left: mean(ok.iter().map(|e| e.bandwidths.h_left)),
        mean_h_right: mean(ok.iter().map(|e| e.bandwidths.h_right)),
        first_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityExperimentSummary {
    pub dgp: String,
    pub n: usize,
    pub replications: usize,
    pub failed: usize,
    pub alpha: f64,
    pub rejection_rate: f64,
    pub mean_statistic: f64,
}

/// Rejection frequency of the density continuity test at level `alpha`.
pub fn run_density_experiment(
    spec: &DgpSpec,
    n: usize,
    replications: usize,
    config: &DensityConfig,
    alpha: f64,
) -> Result<DensityExperimentSummary> {
    spec.validate()?;
    check_reps(replications)?;
    let results: Vec<Option<(f64, f64)>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            generate_replication(spec, n, r)
                .and_then(|d| density_test(&d, config))
                .ok()
                .map(|t| (t.statistic, t.p_value))
        })
        .collect();
    let ok: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(RdError::Numeric(format!("all {replications} density replications failed")));
    }
    Ok(DensityExperimentSummary {
        dgp: spec.name.clone(),
        n,
        replications,
        failed: replications - ok.len(),
        alpha,
        rejection_rate: ok.iter().filter(|(_, p)| *p < alpha).count() as f64 / ok.len() as f64,
        mean_statistic: mean(ok.iter().map(|(t, _)| *t)),
    })
}
