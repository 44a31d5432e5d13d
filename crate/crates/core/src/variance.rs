//! Residual constructions and sandwich variances for local polynomial fits.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Side;
use crate::error::{RdError, Result};
use crate::local_poly::SideFit;

/// Variance estimator for the sandwich "meat".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Vce {
    /// Nearest-neighbor residuals with `k` matches.
    Nn { k: usize },
    Hc0,
    Hc1,
    Hc2,
    Hc3,
}

impl Default for Vce {
    fn default() -> Self {
        Vce::Nn { k: 3 }
    }
}

impl fmt::Display for Vce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vce::Nn { k } => write!(f, "nn({k})"),
            Vce::Hc0 => f.write_str("hc0"),
            Vce::Hc1 => f.write_str("hc1"),
            Vce::Hc2 => f.write_str("hc2"),
            Vce::Hc3 => f.write_str("hc3"),
        }
    }
}

impl FromStr for Vce {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Vce::default()),
            "hc0" => Ok(Vce::Hc0),
            "hc1" => Ok(Vce::Hc1),
            "hc2" => Ok(Vce::Hc2),
            "hc3" => Ok(Vce::Hc3),
            other => Err(RdError::InvalidInput(format!("unknown variance estimator `{other}`"))),
        }
    }
}

impl Vce {
    pub fn with_matches(self, k: usize) -> Self {
        match self {
            Vce::Nn { .. } => Vce::Nn { k },
            other => other,
        }
    }
}

/// Nearest-neighbor residuals on score-sorted data. Tied scores are matched
/// as a block.
pub(crate) fn nn_residuals(x: &[f64], y: &[f64], k: usize, side: Side) -> Result<Vec<f64>> {
    let n = x.len();
    if k == 0 || k >= n {
        return Err(RdError::NeighborsExceedSample { side, k, n });
    }
    let mut dups = vec![0usize; n];
    let mut dupsid = vec![0usize; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[end] == x[start] {
            end += 1;
        }
        for (j, i) in (start..end).enumerate() {
            dups[i] = end - start;
            dupsid[i] = j + 1;
        }
        start = end;
    }
    let target = k.min(n - 1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + y[i];
    }
    Ok((0..n)
        .map(|pos| {
            let mut rpos = dups[pos] - dupsid[pos];
            let mut lpos = dupsid[pos] - 1;
            while lpos + rpos < target {
                let has_left = pos > lpos;
                let has_right = pos + rpos + 1 < n;
                match (has_left, has_right) {
                    (false, _) => rpos += dups[pos + rpos + 1],
                    (true, false) => lpos += dups[pos - lpos - 1],
                    (true, true) => {
                        let dl = x[pos] - x[pos - lpos - 1];
                        let dr = x[pos + rpos + 1] - x[pos];
                        if dl > dr {
                            rpos += dups[pos + rpos + 1];
                        } else if dl < dr {
                            lpos += dups[pos - lpos - 1];
                        } else {
                            rpos += dups[pos + rpos + 1];
                            lpos += dups[pos - lpos - 1];
                        }
                    }
                }
            }
            let lo = pos - lpos;
            let hi = (pos + rpos).min(n - 1);
            let j = (hi - lo) as f64;
            let others = prefix[hi + 1] - prefix[lo] - y[pos];
            (j / (j + 1.0)).sqrt() * (y[pos] - others / j)
        })
        .collect())
}

/// Heteroskedasticity-consistent residuals. `hii` is required for hc2/hc3;
/// `dof` is the number of fitted coefficients (hc1 correction).
pub(crate) fn hc_residuals(y: &[f64], fitted: &[f64], hii: &[f64], vce: Vce, dof: usize) -> Vec<f64> {
    let n = y.len() as f64;
    y.iter()
        .zip(fitted)
        .enumerate()
        .map(|(i, (y, f))| {
            let e = y - f;
            match vce {
                Vce::Hc0 | Vce::Nn { .. } => e,
                Vce::Hc1 => e * (n / (n - dof as f64)).sqrt(),
                Vce::Hc2 => e * (1.0 / (1.0 - hii[i])).sqrt(),
                Vce::Hc3 => e / (1.0 - hii[i]),
            }
        })
        .collect()
}

/// `sum_i (l_i e_i)^2`, or the cluster-summed analogue with the usual
/// small-sample factor `(n-1)/(n-k) * g/(g-1)`.
pub(crate) fn sandwich(l: &[f64], e: &[f64], clusters: Option<&[usize]>, k: usize) -> Result<f64> {
    match clusters {
        None => Ok(l.iter().zip(e).map(|(l, e)| (l * e).powi(2)).sum()),
        Some(ids) => {
            let mut sums: HashMap<usize, f64> = HashMap::new();
            for ((l, e), g) in l.iter().zip(e).zip(ids) {
                *sums.entry(*g).or_default() += l * e;
            }
            let g = sums.len();
            if g < 2 {
                return Err(RdError::TooFewClusters { found: g });
            }
            let n = l.len() as f64;
            let factor = ((n - 1.0) / (n - k as f64)) * (g as f64 / (g as f64 - 1.0));
            // sort keys so the floating-point sum is order-independent
            let mut keys: Vec<_> = sums.into_iter().collect();
            keys.sort_unstable_by_key(|(g, _)| *g);
            Ok(factor * keys.iter().map(|(_, s)| s * s).sum::<f64>())
        }
    }
}

/// Residuals for a fit according to `vce`, aligned with the fit window.
pub(crate) fn fit_residuals(
    x: &[f64],
    y: &[f64],
    fitted: &[f64],
    hii: &[f64],
    vce: Vce,
    dof: usize,
    side: Side,
) -> Result<Vec<f64>> {
    match vce {
        Vce::Nn { k } => nn_residuals(x, y, k, side),
        _ => Ok(hc_residuals(y, fitted, hii, vce, dof)),
    }
}

/// Variance of one side's intercept estimate within the fit's own window.
pub fn intercept_variance(fit: &SideFit, vce: Vce, clustered: bool) -> Result<f64> {
    let k = fit.order + 1;
    let rows: Vec<Vec<f64>> = fit
        .scores
        .iter()
        .map(|x| (0..k).map(|j| (x - fit.cutoff).powi(j as i32)).collect())
        .collect();
    let a = fit.inv_gram.row(0);
    let l: Vec<f64> = rows
        .iter()
        .zip(&fit.weights)
        .map(|(r, w)| (0..k).map(|j| a[j] * r[j]).sum::<f64>() * w)
        .collect();
    let hii: Vec<f64> = rows
        .iter()
        .zip(&fit.weights)
        .map(|(r, w)| {
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    s += r[i] * fit.inv_gram[(i, j)] * r[j];
                }
            }
            s * w
        })
        .collect();
    let fitted: Vec<f64> = fit.outcomes.iter().zip(&fit.residuals).map(|(y, r)| y - r).collect();
    let e = fit_residuals(&fit.scores, &fit.outcomes, &fitted, &hii, vce, k, fit.side)?;
    let clusters = if clustered {
        Some(fit.clusters.as_deref().ok_or(RdError::MissingClusters)?)
    } else {
        None
    };
    sandwich(&l, &e, clusters, k)
}

/// Sandwich variance of `mu_right - mu_left` from two side fits.
pub fn conventional_variance(left: &SideFit, right: &SideFit, vce: Vce, clustered: bool) -> Result<f64> {
    Ok(intercept_variance(left, vce, clustered)? + intercept_variance(right, vce, clustered)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    // brute force: sort all others by distance, take the k closest, expanding
    // to include full ties at the boundary distance
    fn nn_oracle(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut d: Vec<(f64, usize)> = (0..x.len()).filter(|&j| j != i).map(|j| ((x[j] - x[i]).abs(), j)).collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0));
                let cut = d[k - 1].0;
                let chosen: Vec<usize> = d.iter().filter(|(dd, _)| *dd <= cut).map(|(_, j)| *j).collect();
                let j = chosen.len() as f64;
                let m = chosen.iter().map(|&j| y[j]).sum::<f64>() / j;
                (j / (j + 1.0)).sqrt() * (y[i] - m)
            })
            .collect()
    }

    #[test]
    fn nn_matches_brute_force_without_ties() {
        let x = [0.1, 0.25, 0.3, 0.55, 0.6, 0.9, 1.4, 1.45];
        let y = [1.0, -2.0, 0.5, 3.0, 2.0, -1.0, 0.0, 4.0];
        for k in 1..5 {
            let got = nn_residuals(&x, &y, k, Side::Right).unwrap();
            let want = nn_oracle(&x, &y, k);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "k={k}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn nn_equidistant_neighbors_both_enter() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 5.0, 3.0];
        let r = nn_residuals(&x, &y, 1, Side::Right).unwrap();
        // middle point: both neighbors at distance 1
        assert!((r[1] - (2.0f64 / 3.0).sqrt() * (5.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn nn_rejects_k_at_sample_size() {
        assert!(matches!(
            nn_residuals(&[1.0, 2.0, 3.0], &[0.0; 3], 3, Side::Left),
            Err(RdError::NeighborsExceedSample { k: 3, n: 3, .. })
        ));
    }

    #[test]
    fn hc_factors() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let f = [0.0; 4];
        let h = [0.5; 4];
        assert_eq!(hc_residuals(&y, &f, &h, Vce::Hc0, 2), y.to_vec());
        let r1 = hc_residuals(&y, &f, &h, Vce::Hc1, 2);
        assert!((r1[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((hc_residuals(&y, &f, &h, Vce::Hc2, 2)[1] - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(hc_residuals(&y, &f, &h, Vce::Hc3, 2)[2], 6.0);
    }

    #[test]
    fn singleton_clusters_collapse_to_plain_sum() {
        let l = [0.3, -0.2, 0.5, 0.1];
        let e = [1.0, 2.0, -1.0, 0.5];
        let plain = sandwich(&l, &e, None, 2).unwrap();
        let ids = [0, 1, 2, 3];
        let clustered = sandwich(&l, &e, Some(&ids), 2).unwrap();
        let factor = (3.0 / 2.0) * (4.0 / 3.0);
        assert!((clustered - factor * plain).abs() < 1e-14);
        assert!(matches!(sandwich(&l, &e, Some(&[0, 0, 0, 0]), 2), Err(RdError::TooFewClusters { found: 1 })));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("nn".parse::<Vce>().unwrap(), Vce::Nn { k: 3 });
        assert_eq!("HC2".parse::<Vce>().unwrap(), Vce::Hc2);
        assert_eq!(Vce::Nn { k: 5 }.to_string(), "nn(5)");
        assert!("robust".parse::<Vce>().is_err());
    }
}
