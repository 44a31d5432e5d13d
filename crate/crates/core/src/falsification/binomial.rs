use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::dataset::RdData;
use crate::error::{RdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTest {
    pub half_width: f64,
    pub prob: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub p_value: f64,
}

/// Exact two-sided binomial p-value: the total probability of all outcomes
/// no more likely than `successes`.
pub fn binomial_p_value(successes: u64, trials: u64, prob: f64) -> Result<f64> {
    if successes > trials {
        return Err(RdError::InvalidInput(format!("{successes} successes exceed {trials} trials")));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(RdError::InvalidInput(format!("success probability {prob} outside [0, 1]")));
    }
    let dist = Binomial::new(prob, trials).map_err(|e| RdError::InvalidInput(e.to_string()))?;
    let observed = dist.pmf(successes);
    // relative slack so exactly tied outcomes are not lost to rounding
    let bound = observed * (1.0 + 1e-7);
    let total: f64 = (0..=trials).map(|k| dist.pmf(k)).filter(|&pk| pk <= bound).sum();
    Ok(total.min(1.0))
}

/// Counts within `[c - w, c + w]` on each side and the exact test that a
/// unit in the window is treated with probability `prob`.
pub fn binomial_window(data: &RdData, half_width: f64, prob: f64) -> Result<BinomialTest> {
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(RdError::InvalidInput(format!("window half-width must be positive, got {half_width}")));
    }
    let c = data.cutoff();
    let (mut n_left, mut n_right) = (0usize, 0usize);
    for &x in data.scores() {
        if (x - c).abs() <= half_width {
            if x >= c {
                n_right += 1;
            } else {
                n_left += 1;
            }
        }
    }
    if n_left + n_right == 0 {
        return Err(RdError::EmptyWindow);
    }
    let p_value = binomial_p_value(n_right as u64, (n_left + n_right) as u64, prob)?;
    Ok(BinomialTest { half_width, prob, n_left, n_right, p_value })
}
