use nalgebra::{DMatrix, DVector};

use crate::dataset::Side;
use crate::error::{RdError, Result};

pub(crate) const MIN_RCOND: f64 = 1e-12;

/// Weighted least squares through a QR factorization of `sqrt(W) X`.
pub(crate) struct WeightedLs {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    sqrt_w: Vec<f64>,
}

impl WeightedLs {
    pub fn new(design: &DMatrix<f64>, weights: &[f64], side: Side) -> Result<Self> {
        let (n, k) = design.shape();
        if n < k {
            return Err(RdError::InsufficientObservations { side, needed: k, found: n });
        }
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut a = design.clone();
        for (i, sw) in sqrt_w.iter().enumerate() {
            a.row_mut(i).scale_mut(*sw);
        }
        let qr = a.qr();
        let r = qr.r();
        let sv = r.singular_values();
        let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        let rcond = if hi > 0.0 { (lo / hi).powi(2) } else { 0.0 };
        if !(rcond >= MIN_RCOND) {
            return Err(RdError::IllConditioned { side, rcond });
        }
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(RdError::IllConditioned { side, rcond })?;
        Ok(WeightedLs { r, r_inv, qr, sqrt_w })
    }

    /// `X'WX`
    pub fn gram(&self) -> DMatrix<f64> {
        self.r.transpose() * &self.r
    }

    /// `(X'WX)^{-1}`
    pub fn inv_gram(&self) -> DMatrix<f64> {
        &self.r_inv * self.r_inv.transpose()
    }

    pub fn solve(&self, y: &[f64]) -> DVector<f64> {
        let mut b = DVector::from_iterator(y.len(), y.iter().zip(&self.sqrt_w).map(|(y, w)| y * w));
        self.qr.q_tr_mul(&mut b);
        let k = self.r_inv.nrows();
        &self.r_inv * b.rows(0, k)
    }
}

/// Powers `u^0..u^order` for each element.
pub(crate) fn poly_design(u: &[f64], order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(u.len(), order + 1, |i, j| u[i].powi(j as i32))
}

/// Symmetric positive definite solve. On failure returns the index of the
/// first column that is (numerically) a combination of the earlier ones.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> std::result::Result<DVector<f64>, usize> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)].max(0.0).sqrt()).collect();
    if let Some(j) = d.iter().position(|&v| v == 0.0) {
        return Err(j);
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let first_bad = |l: &DMatrix<f64>| (0..l.nrows()).find(|&j| l[(j, j)].powi(2) <= 1e-10);
    let chol = match nalgebra::Cholesky::new(scaled.clone()) {
        Some(ch) => ch,
        None => {
            let j = (1..=n)
                .find(|&m| {
                    nalgebra::Cholesky::new(scaled.view((0, 0), (m, m)).into_owned())
                        .is_none_or(|ch| first_bad(&ch.l()).is_some())
                })
                .map_or(n - 1, |m| m - 1);
            return Err(j);
        }
    };
    if let Some(j) = first_bad(&chol.l()) {
        return Err(j);
    }
    let bs = DVector::from_fn(n, |i, _| b[i] / d[i]);
    let x = chol.solve(&bs);
    Ok(DVector::from_fn(n, |i, _| x[i] / d[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wls_matches_normal_equations() {
        let x = [0.1, 0.3, 0.5, 0.9, 1.2, 1.5];
        let y = [1.0, 0.2, 3.0, 2.0, 5.0, 4.5];
        let w = [1.0, 0.5, 0.2, 0.7, 0.9, 0.3];
        let design = poly_design(&x, 2);
        let fit = WeightedLs::new(&design, &w, Side::Right).unwrap();
        let beta = fit.solve(&y);
        let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
        let g = design.transpose() * &wm * &design;
        let rhs = design.transpose() * &wm * DVector::from_column_slice(&y);
        let oracle = g.clone().lu().solve(&rhs).unwrap();
        assert!((beta - oracle).amax() < 1e-12);
        let inv = g.try_inverse().unwrap();
        assert!((fit.inv_gram() - inv).amax() < 1e-10);
    }

    #[test]
    fn singular_design_is_refused() {
        let design = poly_design(&[1.0, 1.0, 1.0], 1);
        let err = WeightedLs::new(&design, &[1.0; 3], Side::Left).err().unwrap();
        assert!(matches!(err, RdError::IllConditioned { .. }));
    }

    #[test]
    fn spd_solve_flags_collinear_column() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(spd_solve(&a, &DVector::zeros(3)), Err(1));
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = spd_solve(&a, &DVector::from_column_slice(&[1.0, 2.0])).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-14 && (x[1] - 0.6).abs() < 1e-14);
    }
}
