//! L1-penalized GLMs by cyclic coordinate descent.
//!
//! Objective (gaussian): `(1/2n) Σ wᵢ (yᵢ − β₀ − xᵢᵀβ)² + λ‖β‖₁`; binomial
//! replaces the first term with the mean negative log-likelihood and solves a
//! sequence of penalized weighted least-squares problems. Continuous columns
//! are standardized (population SD) before fitting; coefficients are mapped
//! back to the original scale. The intercept is never penalized.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{linear_predictor, FitMetadata, FittedModel, ModelBody};
use crate::data::{ColumnKind, DesignMatrix};
use crate::error::{Error, Result};
use crate::learners::Family;
use crate::rng;
use crate::stats::logistic;

const CD_TOL: f64 = 1e-15;
const CD_MAX_PASSES: usize = 100_000;
const OUTER_MAX: usize = 100;
const OUTER_TOL: f64 = 1e-10;
const PROB_FLOOR: f64 = 1e-5;
const VAR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// `nlambda` log-spaced values from λ_max down to `min_ratio·λ_max`.
    Path { nlambda: usize, min_ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub lambda: LambdaChoice,
    pub cv_folds: usize,
    pub standardize: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            lambda: LambdaChoice::Path {
                nlambda: 100,
                min_ratio: 1e-3,
            },
            cv_folds: 10,
            standardize: true,
        }
    }
}

#[inline]
pub(crate) fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Standardized non-constant, non-intercept columns of a row subset.
pub(crate) struct Prepared {
    pub cols: Vec<Vec<f64>>,
    pub active: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub p: usize,
}

impl Prepared {
    pub fn new(design: &DesignMatrix, rows: &[usize], w: &[f64], standardize: bool) -> Result<Prepared> {
        if !design.has_intercept() {
            return Err(Error::InvalidArgument(
                "penalized learners need an intercept in column 0".into(),
            ));
        }
        let x = design.values();
        let wsum: f64 = w.iter().sum();
        let mut out = Prepared {
            cols: Vec::new(),
            active: Vec::new(),
            center: Vec::new(),
            scale: Vec::new(),
            p: design.n_cols(),
        };
        for (j, info) in design.columns().iter().enumerate().skip(1) {
            let col = x.column(j);
            let c = rows.iter().zip(w).map(|(&r, wi)| wi * col[r]).sum::<f64>() / wsum;
            let var = rows
                .iter()
                .zip(w)
                .map(|(&r, wi)| wi * (col[r] - c) * (col[r] - c))
                .sum::<f64>()
                / wsum;
            if !(var > 1e-24 * (1.0 + c * c)) {
                continue;
            }
            let s = if standardize && info.kind == ColumnKind::Continuous {
                libm::sqrt(var)
            } else {
                1.0
            };
            out.cols.push(rows.iter().map(|&r| (col[r] - c) / s).collect());
            out.active.push(j);
            out.center.push(c);
            out.scale.push(s);
        }
        if out.active.is_empty() {
            return Err(Error::ConstantDesign);
        }
        Ok(out)
    }

    /// Map standardized `(b0, β)` to original-scale coefficients.
    pub fn to_original(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.p];
        let mut intercept = b0;
        for (k, &j) in self.active.iter().enumerate() {
            let b = beta[k] / self.scale[k];
            out[j] = b;
            intercept -= b * self.center[k];
        }
        out[0] = intercept;
        out
    }
}

/// Minimize `½ Σ vᵢ (zᵢ − b₀ − Σⱼ xᵢⱼ bⱼ)² + λ Σ|bⱼ|` in place.
///
/// `resid` must hold `z − b₀ − Xb` on entry and is kept current.
pub(crate) fn cd_pwls(
    cols: &[Vec<f64>],
    v: &[f64],
    lambda: f64,
    b0: &mut f64,
    beta: &mut [f64],
    resid: &mut [f64],
) -> usize {
    let vsum: f64 = v.iter().sum();
    let a: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().zip(v).map(|(x, w)| w * x * x).sum())
        .collect();
    let scale = resid.iter().zip(v).map(|(r, w)| w * r * r).sum::<f64>().max(1e-300) / vsum;
    let tol = CD_TOL * scale.max(1e-30);
    let mut passes = 0;

    let pass = |only_active: bool, b0: &mut f64, beta: &mut [f64], resid: &mut [f64]| -> f64 {
        let mut max_change = 0.0_f64;
        let d = resid.iter().zip(v).map(|(r, w)| w * r).sum::<f64>() / vsum;
        if d != 0.0 {
            *b0 += d;
            for r in resid.iter_mut() {
                *r -= d;
            }
            max_change = max_change.max(vsum * d * d);
        }
        for j in 0..cols.len() {
            if only_active && beta[j] == 0.0 {
                continue;
            }
            if a[j] <= 0.0 {
                continue;
            }
            let col = &cols[j];
            let g: f64 = col.iter().zip(v).zip(resid.iter()).map(|((x, w), r)| w * x * r).sum::<f64>()
                + a[j] * beta[j];
            let new = soft_threshold(g, lambda) / a[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                max_change = max_change.max(a[j] * delta * delta);
            }
        }
        max_change
    };

    while passes < CD_MAX_PASSES {
        passes += 1;
        if pass(false, b0, beta, resid) < tol {
            break;
        }
        while passes < CD_MAX_PASSES {
            passes += 1;
            if pass(true, b0, beta, resid) < tol {
                break;
            }
        }
    }
    passes
}

/// Smallest λ at which every slope is zero: `max_j |Σ vᵢ xᵢⱼ (yᵢ − ȳ)|`
/// with `v` summing to one.
pub(crate) fn lambda_max(cols: &[Vec<f64>], y: &[f64], v: &[f64]) -> f64 {
    let ybar = y.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    cols.iter()
        .map(|c| {
            c.iter()
                .zip(y)
                .zip(v)
                .map(|((x, yi), w)| w * x * (yi - ybar))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

pub(crate) fn lambda_grid(lmax: f64, nlambda: usize, min_ratio: f64) -> Vec<f64> {
    if nlambda <= 1 {
        return alloc::vec![lmax];
    }
    let step = libm::log(min_ratio) / (nlambda - 1) as f64;
    (0..nlambda).map(|k| lmax * libm::exp(step * k as f64)).collect()
}

/// Fit the whole λ sequence with warm starts; original-scale coefficients per λ.
fn fit_path(
    design: &DesignMatrix,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
    family: Family,
    lambdas: &[f64],
    standardize: bool,
) -> Result<Vec<Vec<f64>>> {
    let prep = Prepared::new(design, rows, w, standardize)?;
    let n = rows.len();
    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut beta = alloc::vec![0.0; prep.cols.len()];
    let mut out = Vec::with_capacity(lambdas.len());
    match family {
        Family::Gaussian => {
            let v: Vec<f64> = w.iter().map(|wi| wi / wsum).collect();
            let mut b0 = ybar;
            let mut resid: Vec<f64> = y.iter().map(|yi| yi - b0).collect();
            for &lambda in lambdas {
                cd_pwls(&prep.cols, &v, lambda, &mut b0, &mut beta, &mut resid);
                out.push(prep.to_original(b0, &beta));
            }
        }
        Family::Binomial => {
            let pbar = ybar.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let mut b0 = libm::log(pbar / (1.0 - pbar));
            let mut eta = alloc::vec![b0; n];
            for &lambda in lambdas {
                let mut dev_old = f64::INFINITY;
                for _ in 0..OUTER_MAX {
                    let mut v = alloc::vec![0.0; n];
                    let mut resid = alloc::vec![0.0; n];
                    let mut dev = 0.0;
                    for i in 0..n {
                        let mu = logistic(eta[i]);
                        let var = (mu * (1.0 - mu)).max(VAR_FLOOR);
                        v[i] = w[i] * var / wsum;
                        resid[i] = (y[i] - mu) / var;
                        dev -= w[i] * if y[i] > 0.5 { libm::log(mu.max(1e-300)) } else { libm::log1p(-mu) };
                    }
                    let (b0_old, beta_old) = (b0, beta.clone());
                    cd_pwls(&prep.cols, &v, lambda, &mut b0, &mut beta, &mut resid);
                    for i in 0..n {
                        eta[i] = b0 + prep.cols.iter().zip(&beta).map(|(c, b)| b * c[i]).sum::<f64>();
                    }
                    let moved = beta
                        .iter()
                        .zip(&beta_old)
                        .map(|(a, b)| (a - b).abs())
                        .fold((b0 - b0_old).abs(), f64::max);
                    if moved < OUTER_TOL || (dev - dev_old).abs() / (dev.abs() + 0.1) < 1e-15 {
                        break;
                    }
                    dev_old = dev;
                }
                if beta.iter().zip(&prep.scale).any(|(b, s)| (b / s).abs() > 1e6) {
                    return Err(Error::Separation);
                }
                out.push(prep.to_original(b0, &beta));
            }
        }
        Family::Multinomial { .. } => {
            return Err(Error::InvalidSpec(
                "use fit_multinomial with a lasso penalty for multinomial responses".into(),
            ))
        }
    }
    Ok(out)
}

/// Mean held-out deviance contribution.
pub(crate) fn deviance(family: Family, y: &[f64], pred: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    match family {
        Family::Binomial => {
            -2.0 * y
                .iter()
                .zip(pred)
                .map(|(&yi, &p)| {
                    let p = p.clamp(1e-10, 1.0 - 1e-10);
                    if yi > 0.5 {
                        libm::log(p)
                    } else {
                        libm::log1p(-p)
                    }
                })
                .sum::<f64>()
                / n
        }
        _ => y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
    }
}

/// Fold labels `0..folds`, stratified by class for binary responses.
pub(crate) fn cv_folds(y: &[f64], folds: usize, family: Family, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed);
    let mut fold = alloc::vec![0; y.len()];
    let groups: Vec<Vec<usize>> = match family {
        Family::Gaussian => alloc::vec![(0..y.len()).collect()],
        _ => {
            let mut labels: Vec<i64> = y.iter().map(|v| *v as i64).collect();
            labels.sort_unstable();
            labels.dedup();
            labels
                .iter()
                .map(|&l| (0..y.len()).filter(|&i| y[i] as i64 == l).collect())
                .collect()
        }
    };
    let mut offset = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for (k, &i) in g.iter().enumerate() {
            fold[i] = (offset + k) % folds;
        }
        offset += g.len();
    }
    fold
}

/// Lasso-penalized GLM with λ chosen by minimum cross-validated deviance.
pub fn fit_lasso(
    design: &DesignMatrix,
    response: &[f64],
    family: Family,
    options: &LassoOptions,
    seed: u64,
) -> Result<FittedModel> {
    let n = design.n_rows();
    if response.len() != n {
        return Err(Error::InvalidArgument("response length differs from design rows".into()));
    }
    family.check_response(response)?;
    let all: Vec<usize> = (0..n).collect();
    let ones = alloc::vec![1.0; n];
    // Fails early on an all-constant design.
    let prep = Prepared::new(design, &all, &ones, options.standardize)?;

    let ybar = response.iter().sum::<f64>() / n as f64;
    if response.iter().all(|&y| y == response[0]) {
        let mut meta = FitMetadata {
            n_train: n,
            ..FitMetadata::default()
        };
        meta.warnings
            .push("lasso: constant response, returning an intercept-only model".to_string());
        let mut coef = alloc::vec![0.0; design.n_cols()];
        return Ok(match family {
            Family::Binomial => FittedModel {
                meta,
                ..FittedModel::constant("lasso", family, ybar, n)
            },
            _ => {
                coef[0] = ybar;
                FittedModel {
                    learner: "lasso".into(),
                    family,
                    body: ModelBody::Linear(coef),
                    meta,
                }
            }
        });
    }

    let lambdas = match options.lambda {
        LambdaChoice::Fixed(l) => {
            if !(l >= 0.0) {
                return Err(Error::InvalidArgument("lambda must be non-negative".into()));
            }
            alloc::vec![l]
        }
        LambdaChoice::Path { nlambda, min_ratio } => {
            if options.cv_folds < 2 || n < options.cv_folds {
                return Err(Error::InvalidSpec(alloc::format!(
                    "lasso needs 2 <= cv_folds <= n (cv_folds = {}, n = {n})",
                    options.cv_folds
                )));
            }
            let v = alloc::vec![1.0 / n as f64; n];
            let lmax = lambda_max(&prep.cols, response, &v);
            let grid = lambda_grid(lmax, nlambda.max(1), min_ratio);
            let folds = cv_folds(response, options.cv_folds, family, seed);
            let mut risk = alloc::vec![0.0; grid.len()];
            for k in 0..options.cv_folds {
                let train: Vec<usize> = (0..n).filter(|&i| folds[i] != k).collect();
                let test: Vec<usize> = (0..n).filter(|&i| folds[i] == k).collect();
                let ytr: Vec<f64> = train.iter().map(|&i| response[i]).collect();
                let yte: Vec<f64> = test.iter().map(|&i| response[i]).collect();
                let wtr = alloc::vec![1.0; train.len()];
                let path = fit_path(design, &train, &ytr, &wtr, family, &grid, options.standardize)?;
                let xte = design.select_rows(&test);
                for (l, coef) in path.iter().enumerate() {
                    let mut pred = linear_predictor(&xte, coef);
                    if family == Family::Binomial {
                        pred.iter_mut().for_each(|e| *e = logistic(*e));
                    }
                    risk[l] += deviance(family, &yte, &pred) * test.len() as f64 / n as f64;
                }
            }
            let best = risk
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            grid[..=best].to_vec()
        }
    };
    let path = fit_path(design, &all, response, &ones, family, &lambdas, options.standardize)?;
    let coef = path.into_iter().last().unwrap();
    Ok(FittedModel {
        learner: "lasso".into(),
        family,
        body: ModelBody::Linear(coef),
        meta: FitMetadata {
            n_train: n,
            lambda: lambdas.last().copied(),
            ..FitMetadata::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_glm;
    use alloc::vec;
    use rand::Rng;

    fn noisy_design(n: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
        let mut r = rng::stream(seed);
        let x1: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let x2: Vec<f64> = (0..n).map(|i| 0.3 * x1[i] + r.random::<f64>()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * x1[i] - 1.0 * x2[i] + r.random::<f64>() - 0.5)
            .collect();
        (DesignMatrix::with_intercept(&[x1, x2]), y)
    }

    #[test]
    fn orthonormal_design_soft_thresholds_least_squares() {
        // Walsh columns: mean zero, unit population variance, mutually orthogonal.
        let n = 8;
        let walsh = |k: usize| -> Vec<f64> {
            (0..n).map(|i| if (i >> k) & 1 == 0 { 1.0 } else { -1.0 }).collect()
        };
        let cols = vec![walsh(0), walsh(1), walsh(2)];
        let y = vec![3.1, -0.4, 2.2, 0.9, -1.7, 0.3, 1.1, 2.6];
        let d = DesignMatrix::with_intercept(&cols);
        for lambda in [0.05, 0.3, 0.8] {
            let opts = LassoOptions {
                lambda: LambdaChoice::Fixed(lambda),
                ..LassoOptions::default()
            };
            let fit = fit_lasso(&d, &y, Family::Gaussian, &opts, 0).unwrap();
            let coef = fit.coefficients().unwrap();
            let ybar = y.iter().sum::<f64>() / n as f64;
            assert!((coef[0] - ybar).abs() < 1e-6);
            for (j, c) in cols.iter().enumerate() {
                let ols: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                let expected = ols.signum() * (ols.abs() - lambda).max(0.0);
                assert!((coef[j + 1] - expected).abs() < 1e-6, "λ={lambda} j={j}");
            }
        }
    }

    #[test]
    fn zero_lambda_equals_glm() {
        let (d, y) = noisy_design(200, 4);
        let opts = LassoOptions {
            lambda: LambdaChoice::Fixed(0.0),
            ..LassoOptions::default()
        };
        let l = fit_lasso(&d, &y, Family::Gaussian, &opts, 1).unwrap();
        let g = fit_glm(&d, &y, Family::Gaussian, None).unwrap();
        for (a, b) in l.coefficients().unwrap().iter().zip(g.coefficients().unwrap()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_lambda_equals_glm_binomial() {
        let (d, y) = noisy_design(300, 9);
        let yb: Vec<f64> = y.iter().map(|v| f64::from(u8::from(*v > 1.0))).collect();
        let opts = LassoOptions {
            lambda: LambdaChoice::Fixed(0.0),
            ..LassoOptions::default()
        };
        let l = fit_lasso(&d, &yb, Family::Binomial, &opts, 1).unwrap();
        let g = fit_glm(&d, &yb, Family::Binomial, None).unwrap();
        for (a, b) in l.coefficients().unwrap().iter().zip(g.coefficients().unwrap()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn above_lambda_max_all_slopes_zero() {
        let (d, y) = noisy_design(100, 2);
        let all: Vec<usize> = (0..100).collect();
        let prep = Prepared::new(&d, &all, &[1.0; 100], true).unwrap();
        let lmax = lambda_max(&prep.cols, &y, &[0.01; 100]);
        let opts = LassoOptions {
            lambda: LambdaChoice::Fixed(lmax * 1.0000001),
            ..LassoOptions::default()
        };
        let fit = fit_lasso(&d, &y, Family::Gaussian, &opts, 1).unwrap();
        let c = fit.coefficients().unwrap();
        assert!(c[1] == 0.0 && c[2] == 0.0);
        let ybar = y.iter().sum::<f64>() / 100.0;
        assert!((c[0] - ybar).abs() < 1e-12);
        // Just below λ_max at least one slope is active.
        let opts = LassoOptions {
            lambda: LambdaChoice::Fixed(lmax * 0.99),
            ..opts
        };
        let fit = fit_lasso(&d, &y, Family::Gaussian, &opts, 1).unwrap();
        assert!(fit.coefficients().unwrap()[1..].iter().any(|&b| b != 0.0));
    }

    #[test]
    fn constant_design_is_an_error() {
        let d = DesignMatrix::with_intercept(&[vec![2.0; 10]]);
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(
            fit_lasso(&d, &y, Family::Gaussian, &LassoOptions::default(), 0).unwrap_err(),
            Error::ConstantDesign
        );
    }

    #[test]
    fn constant_response_gives_intercept_only() {
        let (d, _) = noisy_design(30, 1);
        let fit = fit_lasso(&d, &[4.0; 30], Family::Gaussian, &LassoOptions::default(), 0).unwrap();
        assert_eq!(fit.coefficients().unwrap(), &[4.0, 0.0, 0.0]);
        assert_eq!(fit.meta.warnings.len(), 1);
    }

    #[test]
    fn cross_validated_path_recovers_signal() {
        let (d, y) = noisy_design(400, 11);
        let fit = fit_lasso(&d, &y, Family::Gaussian, &LassoOptions::default(), 5).unwrap();
        let c = fit.coefficients().unwrap();
        assert!((c[1] - 2.0).abs() < 0.1 && (c[2] + 1.0).abs() < 0.2, "{c:?}");
        assert!(fit.meta.lambda.unwrap() > 0.0);
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i < 10))).collect();
        let f = cv_folds(&y, 5, Family::Binomial, 3);
        for k in 0..5 {
            let ones = (0..40).filter(|&i| f[i] == k && y[i] == 1.0).count();
            assert_eq!(ones, 2);
        }
    }
}
