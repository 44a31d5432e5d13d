//! Kernel weight functions with compact support on [-1, 1] and their
//! one-sided moments.
//!
//! Weights are left unnormalized (the triangular kernel peaks at 1). Every
//! consumer in this crate is invariant to a constant rescaling of the kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::RdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Triangular,
    Uniform,
    Epanechnikov,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Triangular, Kernel::Uniform, Kernel::Epanechnikov];

    /// Kernel weight at `u`. Exactly zero outside `|u| <= 1`.
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Triangular => 1.0 - a,
            Kernel::Uniform => 1.0,
            Kernel::Epanechnikov => 1.0 - u * u,
        }
    }

    /// Closed form of `∫₀¹ u^degree K(u) du`.
    pub fn boundary_moment(self, degree: u32) -> f64 {
        let j = degree as f64;
        match self {
            Kernel::Uniform => 1.0 / (j + 1.0),
            Kernel::Triangular => 1.0 / ((j + 1.0) * (j + 2.0)),
            Kernel::Epanechnikov => 2.0 / ((j + 1.0) * (j + 3.0)),
        }
    }

    /// Closed form of `∫₀¹ u^degree K(u)² du`.
    pub fn boundary_square_moment(self, degree: u32) -> f64 {
        let j = degree as f64;
        match self {
            Kernel::Uniform => 1.0 / (j + 1.0),
            Kernel::Triangular => 1.0 / (j + 1.0) - 2.0 / (j + 2.0) + 1.0 / (j + 3.0),
            Kernel::Epanechnikov => 1.0 / (j + 1.0) - 2.0 / (j + 3.0) + 1.0 / (j + 5.0),
        }
    }

    /// Rule-of-thumb constant for the pilot bandwidth `C·min(sd, IQR/1.349)·n^(-1/5)`.
    pub(crate) fn pilot_constant(self) -> f64 {
        match self {
            Kernel::Triangular => 2.576,
            Kernel::Uniform => 1.843,
            Kernel::Epanechnikov => 2.34,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Triangular => "triangular",
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "triangular" | "tri" => Ok(Kernel::Triangular),
            "uniform" | "uni" => Ok(Kernel::Uniform),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            other => Err(RdError::InvalidInput(format!("unknown kernel `{other}`"))),
        }
    }
}

/// `∫₀¹ u^degree K(u) du` by adaptive Simpson quadrature.
pub fn boundary_moment_quadrature(kernel: Kernel, degree: u32, tol: f64) -> f64 {
    let f = |u: f64| u.powi(degree as i32) * kernel.weight(u);
    adaptive_simpson(&f, 0.0, 1.0, tol, 48)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
