//! Multinomial logistic regression with the reference class (label 0)
//! pinned at zero coefficients.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::glm::SEPARATION_BOUND;
use super::lasso::{cd_pwls, cv_folds, lambda_grid, LambdaChoice, LassoOptions, Prepared};
use super::{FitMetadata, FittedModel, ModelBody};
use crate::data::{ColumnKind, DesignMatrix};
use crate::error::{Error, Result};
use crate::learners::Family;
use crate::linalg::solve_spd;
use crate::stats::softmax_in_place;

const MAX_ITER: usize = 100;
const DEVIANCE_TOL: f64 = 1e-10;
const PROB_FLOOR: f64 = 1e-5;
/// Largest standardized coefficient change that ends a penalized sweep.
const PATH_TOL: f64 = 1e-7;
/// The path stops once a step in λ gains less than this fraction of the
/// null deviance.
const PATH_DEVIANCE_GAIN: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MultinomialPenalty {
    #[default]
    None,
    Lasso(LassoOptions),
}

fn class_probabilities(x: &DMatrix<f64>, rows: &[usize], coef: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = coef.len();
    rows.iter()
        .map(|&r| {
            let mut eta: Vec<f64> = (0..k)
                .map(|c| coef[c].iter().enumerate().map(|(j, b)| b * x[(r, j)]).sum())
                .collect();
            softmax_in_place(&mut eta);
            eta
        })
        .collect()
}

fn deviance(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    -2.0 * probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| libm::log(p[l].max(1e-300)))
        .sum::<f64>()
}

/// Fit `P(class = k | x) ∝ exp(xᵀβₖ)` with `β₀ = 0`.
///
/// Unpenalized fits use Newton-Raphson on the full Hessian; lasso fits use
/// per-class penalized weighted least squares with λ chosen by
/// cross-validated multinomial deviance.
pub fn fit_multinomial(
    design: &DesignMatrix,
    labels: &[usize],
    classes: usize,
    penalty: MultinomialPenalty,
    seed: u64,
) -> Result<FittedModel> {
    if labels.len() != design.n_rows() {
        return Err(Error::InvalidArgument("label length differs from design rows".into()));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument("multinomial model needs at least 2 classes".into()));
    }
    let mut counts = alloc::vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::InvalidArgument(alloc::format!("label {l} outside 0..{classes}")));
        }
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(missing));
    }
    match penalty {
        MultinomialPenalty::None => newton(design, labels, classes),
        MultinomialPenalty::Lasso(opts) => lasso(design, labels, classes, &opts, seed),
    }
}

fn newton(design: &DesignMatrix, labels: &[usize], classes: usize) -> Result<FittedModel> {
    let x = design.values();
    let (n, p) = x.shape();
    let free = classes - 1;
    let dim = free * p;
    let rows: Vec<usize> = (0..n).collect();
    let mut coef = alloc::vec![alloc::vec![0.0; p]; classes];
    let mut probs = class_probabilities(x, &rows, &coef);
    let mut dev_old = deviance(&probs, labels);
    let ridge_mask: Vec<bool> = (0..dim)
        .map(|i| design.columns()[i % p].kind != ColumnKind::Intercept)
        .collect();
    let mut fallback_any = false;

    for iter in 1..=MAX_ITER {
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let xi = x.row(i);
            for a in 0..free {
                let pa = probs[i][a + 1];
                let ya = f64::from(u8::from(labels[i] == a + 1));
                for j in 0..p {
                    grad[a * p + j] += xi[j] * (ya - pa);
                }
                for b in a..free {
                    let pb = probs[i][b + 1];
                    let h = if a == b { pa * (1.0 - pa) } else { -pa * pb };
                    for j in 0..p {
                        let hx = h * xi[j];
                        for l in 0..p {
                            hess[(a * p + j, b * p + l)] += hx * xi[l];
                        }
                    }
                }
            }
        }
        for a in 0..free {
            for b in 0..a {
                for j in 0..p {
                    for l in 0..p {
                        hess[(a * p + j, b * p + l)] = hess[(b * p + l, a * p + j)];
                    }
                }
            }
        }
        let grad_max = grad.amax();
        let (step, fallback) = solve_spd(&hess, &grad, &ridge_mask)?;
        fallback_any |= fallback;

        let mut scale = 1.0;
        let mut trial = coef.clone();
        let mut dev = f64::INFINITY;
        for _ in 0..30 {
            for a in 0..free {
                for j in 0..p {
                    trial[a + 1][j] = coef[a + 1][j] + scale * step[a * p + j];
                }
            }
            probs = class_probabilities(x, &rows, &trial);
            dev = deviance(&probs, labels);
            if dev.is_finite() && dev <= dev_old * (1.0 + 1e-12) {
                break;
            }
            scale *= 0.5;
        }
        coef = trial;
        if coef.iter().flatten().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation);
        }
        let converged = (dev_old - dev).abs() / (dev.abs() + 0.1) < DEVIANCE_TOL;
        dev_old = dev;
        if converged && grad_max < 1e-6 {
            return Ok(FittedModel {
                learner: "multinomial-glm".into(),
                family: Family::Multinomial { classes },
                body: ModelBody::Multinomial(coef),
                meta: FitMetadata {
                    n_train: n,
                    iterations: iter,
                    gradient_max: Some(grad_max),
                    ridge_fallback: fallback_any,
                    ..FitMetadata::default()
                },
            });
        }
    }
    Err(Error::NoConvergence {
        solver: "multinomial Newton",
        iterations: MAX_ITER,
    })
}

/// Penalized path with warm starts; one original-scale coefficient set per λ.
fn mn_path(
    design: &DesignMatrix,
    rows: &[usize],
    labels: &[usize],
    classes: usize,
    lambdas: &[f64],
    standardize: bool,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = rows.len();
    let prep = Prepared::new(design, rows, &alloc::vec![1.0; n], standardize)?;
    let q = prep.cols.len();
    let mut b0 = alloc::vec![0.0; classes];
    let mut beta = alloc::vec![alloc::vec![0.0; q]; classes];
    for (c, b) in b0.iter_mut().enumerate().skip(1) {
        let pc = (labels.iter().filter(|&&l| l == c).count() as f64 / n as f64).max(PROB_FLOOR);
        let p0 = (labels.iter().filter(|&&l| l == 0).count() as f64 / n as f64).max(PROB_FLOOR);
        *b = libm::log(pc / p0);
    }
    // Linear predictors per row and class, refreshed one class at a time.
    let refresh = |b0: f64, beta: &[f64], eta: &mut [Vec<f64>], c: usize| {
        for (i, e) in eta.iter_mut().enumerate() {
            e[c] = b0 + prep.cols.iter().zip(beta).map(|(col, b)| b * col[i]).sum::<f64>();
        }
    };
    let mut eta = alloc::vec![alloc::vec![0.0; classes]; n];
    for c in 1..classes {
        refresh(b0[c], &beta[c], &mut eta, c);
    }
    let mut prob = alloc::vec![0.0; classes];
    let mut v = alloc::vec![0.0; n];
    let mut resid = alloc::vec![0.0; n];
    let path_deviance = |eta: &[Vec<f64>], prob: &mut Vec<f64>| -> f64 {
        -2.0 * eta
            .iter()
            .zip(labels)
            .map(|(e, &l)| {
                prob.copy_from_slice(e);
                softmax_in_place(prob);
                libm::log(prob[l].max(1e-300))
            })
            .sum::<f64>()
    };
    let null_deviance = path_deviance(&eta, &mut prob).max(1e-300);
    let mut previous = null_deviance;
    let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if out.len() >= 2 && previous.is_nan() {
            // Saturated path: smaller penalties no longer change the fit.
            out.push(out[out.len() - 1].clone());
            continue;
        }
        for _ in 0..MAX_ITER {
            let mut moved = 0.0_f64;
            for c in 1..classes {
                for i in 0..n {
                    prob.copy_from_slice(&eta[i]);
                    softmax_in_place(&mut prob);
                    let mu = prob[c];
                    let var = (mu * (1.0 - mu)).max(1e-10);
                    let y = f64::from(u8::from(labels[i] == c));
                    v[i] = var / n as f64;
                    resid[i] = (y - mu) / var;
                }
                let (b0_old, beta_old) = (b0[c], beta[c].clone());
                cd_pwls(&prep.cols, &v, lambda, &mut b0[c], &mut beta[c], &mut resid);
                moved = beta[c]
                    .iter()
                    .zip(&beta_old)
                    .map(|(a, b)| (a - b).abs())
                    .fold((b0[c] - b0_old).abs().max(moved), f64::max);
                refresh(b0[c], &beta[c], &mut eta, c);
            }
            if moved < PATH_TOL {
                break;
            }
        }
        let dev = path_deviance(&eta, &mut prob);
        previous = if (previous - dev) / null_deviance < PATH_DEVIANCE_GAIN {
            f64::NAN
        } else {
            dev
        };
        out.push(
            (0..classes)
                .map(|c| {
                    if c == 0 {
                        alloc::vec![0.0; prep.p]
                    } else {
                        prep.to_original(b0[c], &beta[c])
                    }
                })
                .collect(),
        );
    }
    Ok(out)
}

fn lasso(
    design: &DesignMatrix,
    labels: &[usize],
    classes: usize,
    opts: &LassoOptions,
    seed: u64,
) -> Result<FittedModel> {
    let n = labels.len();
    let all: Vec<usize> = (0..n).collect();
    let lambdas = match opts.lambda {
        LambdaChoice::Fixed(l) => alloc::vec![l],
        LambdaChoice::Path { nlambda, min_ratio } => {
            if opts.cv_folds < 2 || n < opts.cv_folds {
                return Err(Error::InvalidSpec("multinomial lasso needs 2 <= cv_folds <= n".into()));
            }
            let prep = Prepared::new(design, &all, &alloc::vec![1.0; n], opts.standardize)?;
            let v = alloc::vec![1.0 / n as f64; n];
            let lmax = (1..classes)
                .map(|c| {
                    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == c))).collect();
                    super::lasso::lambda_max(&prep.cols, &y, &v)
                })
                .fold(0.0, f64::max);
            let grid = lambda_grid(lmax, nlambda.max(1), min_ratio);
            let yf: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            let folds = cv_folds(&yf, opts.cv_folds, Family::Multinomial { classes }, seed);
            let mut risk = alloc::vec![0.0; grid.len()];
            for k in 0..opts.cv_folds {
                let train: Vec<usize> = (0..n).filter(|&i| folds[i] != k).collect();
                let test: Vec<usize> = (0..n).filter(|&i| folds[i] == k).collect();
                let ltr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
                let lte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
                let path = mn_path(design, &train, &ltr, classes, &grid, opts.standardize)?;
                for (l, coef) in path.iter().enumerate() {
                    let probs = class_probabilities(design.values(), &test, coef);
                    risk[l] += deviance(&probs, &lte);
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
    let path = mn_path(design, &all, labels, classes, &lambdas, opts.standardize)?;
    Ok(FittedModel {
        learner: "multinomial-lasso".into(),
        family: Family::Multinomial { classes },
        body: ModelBody::Multinomial(path.into_iter().last().unwrap()),
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
    use crate::rng;
    use rand::Rng;

    fn data(n: usize, classes: usize, seed: u64) -> (DesignMatrix, Vec<usize>) {
        let mut r = rng::stream(seed);
        let x1: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let x2: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let labels = (0..n)
            .map(|i| {
                let mut eta: Vec<f64> = (0..classes)
                    .map(|c| c as f64 * 0.3 * x1[i] - 0.5 * c as f64 * x2[i] * (c % 2) as f64)
                    .collect();
                softmax_in_place(&mut eta);
                let u: f64 = r.random();
                let mut acc = 0.0;
                eta.iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(classes - 1)
            })
            .collect();
        (DesignMatrix::with_intercept(&[x1, x2]), labels)
    }

    #[test]
    fn two_classes_match_binomial_glm() {
        let (d, labels) = data(300, 2, 1);
        let mn = fit_multinomial(&d, &labels, 2, MultinomialPenalty::None, 0).unwrap();
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let bin = fit_glm(&d, &y, Family::Binomial, None).unwrap();
        let p_mn = mn.predict_classes(&d);
        let p_bin = bin.predict(&d);
        for (a, b) in p_mn.iter().zip(p_bin) {
            assert!((a[1] - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let (d, labels) = data(200, 4, 2);
        let fit = fit_multinomial(&d, &labels, 4, MultinomialPenalty::None, 0).unwrap();
        for row in fit.predict_classes(&d) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_permutes_probabilities() {
        let (d, labels) = data(250, 3, 3);
        let perm = [2usize, 0, 1];
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let a = fit_multinomial(&d, &labels, 3, MultinomialPenalty::None, 0).unwrap();
        let b = fit_multinomial(&d, &relabeled, 3, MultinomialPenalty::None, 0).unwrap();
        for (pa, pb) in a.predict_classes(&d).iter().zip(b.predict_classes(&d)) {
            for c in 0..3 {
                assert!((pa[c] - pb[perm[c]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn absent_class_is_an_error() {
        let (d, labels) = data(50, 2, 4);
        assert_eq!(
            fit_multinomial(&d, &labels, 3, MultinomialPenalty::None, 0).unwrap_err(),
            Error::MissingClass(2)
        );
    }

    #[test]
    fn lasso_probabilities_are_normalized_and_sensible() {
        let (d, labels) = data(300, 3, 5);
        let fit = fit_multinomial(
            &d,
            &labels,
            3,
            MultinomialPenalty::Lasso(LassoOptions {
                cv_folds: 5,
                lambda: LambdaChoice::Path {
                    nlambda: 30,
                    min_ratio: 1e-3,
                },
                standardize: true,
            }),
            7,
        )
        .unwrap();
        let probs = fit.predict_classes(&d);
        for row in &probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Average fitted probability matches class frequency (intercept is free).
        for c in 0..3 {
            let freq = labels.iter().filter(|&&l| l == c).count() as f64 / 300.0;
            let mean = probs.iter().map(|r| r[c]).sum::<f64>() / 300.0;
            assert!((freq - mean).abs() < 0.02, "class {c}: {freq} vs {mean}");
        }
    }
}
