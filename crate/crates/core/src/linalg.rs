use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot size below which a Gram matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-12;
/// Ridge added to penalized (non-intercept) diagonal entries on rank deficiency,
/// relative to the mean diagonal.
const RIDGE: f64 = 1e-8;

/// Solve `a x = b` for a symmetric positive semi-definite `a`.
///
/// When `a` is numerically singular a ridge of `RIDGE * mean(diag)` is added
/// to the entries flagged in `ridge_mask` and the solve retried. Returns the
/// solution and whether the fallback fired.
pub(crate) fn solve_spd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge_mask: &[bool],
) -> Result<(DVector<f64>, bool)> {
    if let Some(x) = try_cholesky(a, b) {
        return Ok((x, false));
    }
    let n = a.nrows();
    let mean_diag = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n.max(1) as f64;
    let lambda = RIDGE * mean_diag.max(1.0);
    let mut ridged = a.clone();
    for (i, &pen) in ridge_mask.iter().enumerate() {
        if pen {
            ridged[(i, i)] += lambda;
        }
    }
    match try_cholesky(&ridged, b) {
        Some(x) => Ok((x, true)),
        None => Err(Error::RankDeficient),
    }
}

fn try_cholesky(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let max_diag = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < PIVOT_TOL * max_diag {
        return None;
    }
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// `Xᵀ diag(w) X` and `Xᵀ diag(w) z` in one pass over a column-major design.
pub(crate) fn weighted_normal_equations(
    x: &DMatrix<f64>,
    w: &[f64],
    z: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = x.shape();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut wx: Vec<f64> = alloc::vec![0.0; n];
    for j in 0..p {
        let cj = x.column(j);
        for i in 0..n {
            wx[i] = w[i] * cj[i];
        }
        rhs[j] = wx.iter().zip(z).map(|(a, b)| a * b).sum();
        for k in j..p {
            let ck = x.column(k);
            let v: f64 = wx.iter().zip(ck.iter()).map(|(a, b)| a * b).sum();
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
    }
    (gram, rhs)
}
