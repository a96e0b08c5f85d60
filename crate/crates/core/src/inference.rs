//! Wald intervals and sup-t simultaneous confidence bands.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::crossfit::Executor;
use crate::rng;
pub use crate::stats::{normal_cdf, normal_quantile};

/// Eigenvalue floor used when projecting to a correlation matrix.
pub const EIGEN_FLOOR: f64 = 1e-10;
/// Draws simulated per job when estimating the sup-t critical value.
const CHUNK: usize = 10_000;

/// `estimate ± z_{(1+level)/2} · se`.
pub fn wald_ci(estimate: f64, se: f64, level: f64) -> (f64, f64) {
    let z = normal_quantile(0.5 + 0.5 * level);
    (estimate - z * se, estimate + z * se)
}

/// Nearest correlation matrix by eigenvalue clipping and rescaling to a
/// unit diagonal. Returns the matrix (row-major) and whether it changed.
pub fn nearest_correlation(r: &[f64], dim: usize) -> (Vec<f64>, bool) {
    let m = DMatrix::from_row_slice(dim, dim, r);
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= EIGEN_FLOOR) {
        return (m.as_slice().to_vec(), false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..dim).map(|i| 1.0 / libm::sqrt(rebuilt[(i, i)])).collect();
    let out = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rebuilt[(i, j)] * d[i] * d[j] });
    (out.as_slice().to_vec(), true)
}

/// Factor `F` with `F Fᵀ = R` for a positive semi-definite `R`.
fn factor(r: &[f64], dim: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, r));
    let root = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    eig.eigenvectors * DMatrix::from_diagonal(&root)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValue {
    pub value: f64,
    /// Whether the correlation matrix had to be projected.
    pub projected: bool,
}

/// `level`-quantile of `max_j |Z_j|` for `Z ~ N(0, R)`, by simulation,
/// never below the pointwise normal quantile.
pub fn sup_t_critical_value<E: Executor>(
    correlation: &[f64],
    dim: usize,
    level: f64,
    draws: usize,
    seed: u64,
    executor: &E,
) -> CriticalValue {
    let z = normal_quantile(0.5 + 0.5 * level);
    // A single standardized estimate needs no simulation: max |Z| = |Z|.
    if dim <= 1 || draws == 0 {
        return CriticalValue {
            value: z,
            projected: false,
        };
    }
    let (r, projected) = nearest_correlation(correlation, dim);
    let f = factor(&r, dim);
    let chunks = draws.div_ceil(CHUNK);
    let maxima: Vec<Vec<f64>> = executor.map(chunks, |c| {
        let count = CHUNK.min(draws - c * CHUNK);
        let mut stream = rng::stream(rng::derive(seed, &[c as u64]));
        let mut e = alloc::vec![0.0; dim];
        (0..count)
            .map(|_| {
                for v in e.iter_mut() {
                    *v = StandardNormal.sample(&mut stream);
                }
                (0..dim)
                    .map(|i| libm::fabs((0..dim).map(|j| f[(i, j)] * e[j]).sum::<f64>()))
                    .fold(0.0, f64::max)
            })
            .collect()
    });
    let mut all: Vec<f64> = maxima.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    let idx = (libm::ceil(level * draws as f64) as usize).clamp(1, draws) - 1;
    CriticalValue {
        value: all[idx].max(z),
        projected,
    }
}

/// Sup-t bands `estimate ± c · se` for a set of jointly normal estimates.
pub fn simultaneous_bands<E: Executor>(
    estimates: &[f64],
    se: &[f64],
    correlation: &[f64],
    level: f64,
    draws: usize,
    seed: u64,
    executor: &E,
) -> (Vec<(f64, f64)>, CriticalValue) {
    let c = sup_t_critical_value(correlation, estimates.len(), level, draws, seed, executor);
    let bands = estimates
        .iter()
        .zip(se)
        .map(|(e, s)| (e - c.value * s, e + c.value * s))
        .collect();
    (bands, c)
}

/// One reported quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    /// Source label, or `external`.
    pub target: String,
    pub subgroup: Option<String>,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub scb_lower: Option<f64>,
    pub scb_upper: Option<f64>,
}

/// Build rows with Wald intervals and, when `bands` is given, SCB columns.
pub fn assemble_rows(
    labels: &[(String, Option<String>)],
    estimates: &[f64],
    se: &[f64],
    level: f64,
    bands: Option<&[(f64, f64)]>,
) -> Vec<EstimateRow> {
    labels
        .iter()
        .enumerate()
        .map(|(i, (target, subgroup))| {
            let (ci_lower, ci_upper) = wald_ci(estimates[i], se[i], level);
            EstimateRow {
                target: target.clone(),
                subgroup: subgroup.clone(),
                estimate: estimates[i],
                se: se[i],
                ci_lower,
                ci_upper,
                scb_lower: bands.map(|b| b[i].0),
                scb_upper: bands.map(|b| b[i].1),
            }
        })
        .collect()
}
