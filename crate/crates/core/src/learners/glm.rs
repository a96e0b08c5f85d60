//! Generalized linear models by iteratively reweighted least squares.

use alloc::vec::Vec;

use nalgebra::DVector;

use super::{linear_predictor, FitMetadata, FittedModel, ModelBody};
use crate::data::{ColumnKind, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, weighted_normal_equations};
use crate::learners::Family;
use crate::stats::logistic;

const MAX_ITER: usize = 100;
const DEVIANCE_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-8;
pub(crate) const SEPARATION_BOUND: f64 = 30.0;

fn binomial_deviance(y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    let mut dev = 0.0;
    for ((&yi, &mi), &wi) in y.iter().zip(mu).zip(w) {
        let m = mi.clamp(1e-300, 1.0 - 1e-16);
        dev -= 2.0 * wi * if yi > 0.5 { libm::log(m) } else { libm::log1p(-m) };
    }
    dev
}

/// Max |Xᵀ W (y − μ)|, the score of the (weighted) log-likelihood.
pub(crate) fn score_max(x: &DesignMatrix, y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    let m = x.values();
    let r: Vec<f64> = y.iter().zip(mu).zip(w).map(|((y, m), w)| w * (y - m)).collect();
    (0..m.ncols())
        .map(|j| {
            m.column(j)
                .iter()
                .zip(&r)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Fit a gaussian-identity or binomial-logit GLM.
///
/// Iterates until the relative deviance change drops below 1e-10 and the
/// score is below 1e-8 (at most 100 iterations). A numerically singular
/// `XᵀWX` gets a 1e-8 ridge on the slopes. Any |coefficient| above 30 during
/// a binomial fit is reported as separation.
pub fn fit_glm(
    design: &DesignMatrix,
    response: &[f64],
    family: Family,
    weights: Option<&[f64]>,
) -> Result<FittedModel> {
    let n = design.n_rows();
    if response.len() != n {
        return Err(Error::InvalidArgument("response length differs from design rows".into()));
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    family.check_response(response)?;
    let ones = alloc::vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    let ridge_mask: Vec<bool> = design
        .columns()
        .iter()
        .map(|c| c.kind != ColumnKind::Intercept)
        .collect();
    let x = design.values();

    match family {
        Family::Gaussian => {
            let (gram, rhs) = weighted_normal_equations(x, w, response);
            let (mut beta, fallback) = solve_spd(&gram, &rhs, &ridge_mask)?;
            let mut iterations = 1;
            // Iterative refinement drives the score down to rounding level.
            let mut grad = f64::INFINITY;
            for _ in 0..3 {
                let mu = linear_predictor(design, beta.as_slice());
                grad = score_max(design, response, &mu, w);
                if grad < GRADIENT_TOL || fallback {
                    break;
                }
                let resid: Vec<f64> = response.iter().zip(&mu).map(|(y, m)| y - m).collect();
                let (_, r) = weighted_normal_equations(x, w, &resid);
                let (delta, _) = solve_spd(&gram, &r, &ridge_mask)?;
                beta += delta;
                iterations += 1;
            }
            Ok(FittedModel {
                learner: "glm".into(),
                family,
                body: ModelBody::Linear(beta.as_slice().to_vec()),
                meta: FitMetadata {
                    n_train: n,
                    iterations,
                    gradient_max: Some(grad),
                    ridge_fallback: fallback,
                    ..FitMetadata::default()
                },
            })
        }
        Family::Binomial => fit_logistic(design, response, w, &ridge_mask),
        Family::Multinomial { .. } => Err(Error::InvalidSpec(
            "use fit_multinomial for multinomial responses".into(),
        )),
    }
}

fn fit_logistic(
    design: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    ridge_mask: &[bool],
) -> Result<FittedModel> {
    let x = design.values();
    let n = y.len();
    let mut mu: Vec<f64> = y
        .iter()
        .zip(w)
        .map(|(&yi, &wi)| (wi * yi + 0.5) / (wi + 1.0))
        .collect();
    let mut eta: Vec<f64> = mu.iter().map(|&m| libm::log(m / (1.0 - m))).collect();
    let mut beta = DVector::zeros(design.n_cols());
    let mut dev_old = f64::INFINITY;
    let mut fallback_any = false;
    let mut irls_w = alloc::vec![0.0; n];
    let mut z = alloc::vec![0.0; n];

    for iter in 1..=MAX_ITER {
        for i in 0..n {
            let v = (mu[i] * (1.0 - mu[i])).max(1e-12);
            irls_w[i] = w[i] * v;
            z[i] = eta[i] + (y[i] - mu[i]) / v;
        }
        let (gram, rhs) = weighted_normal_equations(x, &irls_w, &z);
        let (mut proposal, fallback) = solve_spd(&gram, &rhs, ridge_mask)?;
        fallback_any |= fallback;

        // Step halving guards against deviance increases far from the optimum.
        let mut dev = f64::INFINITY;
        for _ in 0..30 {
            eta = linear_predictor(design, proposal.as_slice());
            mu = eta.iter().map(|&e| logistic(e)).collect();
            dev = binomial_deviance(y, &mu, w);
            if dev.is_finite() && (dev <= dev_old * (1.0 + 1e-12) || !dev_old.is_finite()) {
                break;
            }
            proposal = (&proposal + &beta) * 0.5;
        }
        beta = proposal;
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation);
        }
        let grad = score_max(design, y, &mu, w);
        // A vanishing deviance means the classes are separable; keep iterating
        // so the coefficients run past the separation bound.
        let converged = (dev - dev_old).abs() / (dev.abs() + 0.1) < DEVIANCE_TOL
            && dev > 1e-8 * w.iter().sum::<f64>();
        if converged && grad < GRADIENT_TOL.max(1e-12 * n as f64) {
            return Ok(FittedModel {
                learner: "glm".into(),
                family: Family::Binomial,
                body: ModelBody::Linear(beta.as_slice().to_vec()),
                meta: FitMetadata {
                    n_train: n,
                    iterations: iter,
                    gradient_max: Some(grad),
                    ridge_fallback: fallback_any,
                    ..FitMetadata::default()
                },
            });
        }
        dev_old = dev;
    }
    Err(Error::NoConvergence {
        solver: "IRLS",
        iterations: MAX_ITER,
    })
}
