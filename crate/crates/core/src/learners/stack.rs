//! Cross-validated stacking over a candidate library.

use alloc::string::String;
use alloc::vec::Vec;

use super::lasso::cv_folds;
use super::{FitMetadata, FittedModel, LearnerSpec, ModelBody, Stacking};
use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::learners::Family;
use crate::rng;

const PROB_CLIP: f64 = 1e-10;
const GAP_TOL: f64 = 1e-8;
const MAX_ITER: usize = 10_000;

fn width(family: Family) -> usize {
    match family {
        Family::Multinomial { classes } => classes,
        _ => 1,
    }
}

/// Empirical risk of `predictions` for `response`: mean squared error
/// (gaussian) or mean negative log-likelihood (binomial, multinomial).
/// Multinomial predictions are row-major class probabilities.
pub fn cv_risk(family: Family, response: &[f64], predictions: &[f64]) -> f64 {
    let n = response.len() as f64;
    match family {
        Family::Gaussian => {
            response
                .iter()
                .zip(predictions)
                .map(|(y, p)| (y - p) * (y - p))
                .sum::<f64>()
                / n
        }
        Family::Binomial => {
            -response
                .iter()
                .zip(predictions)
                .map(|(&y, &p)| {
                    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p)
                })
                .sum::<f64>()
                / n
        }
        Family::Multinomial { classes } => {
            -response
                .iter()
                .enumerate()
                .map(|(i, &y)| libm::log(predictions[i * classes + y as usize].max(PROB_CLIP)))
                .sum::<f64>()
                / n
        }
    }
}

fn gradient(family: Family, y: &[f64], preds: &[Vec<f64>], blend: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    preds
        .iter()
        .map(|p| match family {
            Family::Gaussian => {
                -2.0 * y
                    .iter()
                    .zip(blend)
                    .zip(p)
                    .map(|((y, b), pj)| (y - b) * pj)
                    .sum::<f64>()
                    / n
            }
            Family::Binomial => {
                -y.iter()
                    .zip(blend)
                    .zip(p)
                    .map(|((&y, &b), pj)| {
                        let b = b.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                        (y / b - (1.0 - y) / (1.0 - b)) * pj
                    })
                    .sum::<f64>()
                    / n
            }
            Family::Multinomial { classes } => {
                -y.iter()
                    .enumerate()
                    .map(|(i, &y)| {
                        let k = i * classes + y as usize;
                        p[k] / blend[k].max(PROB_CLIP)
                    })
                    .sum::<f64>()
                    / n
            }
        })
        .collect()
}

fn blend(preds: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut out = alloc::vec![0.0; preds[0].len()];
    for (p, &wj) in preds.iter().zip(w) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += wj * v;
        }
    }
    out
}

/// Minimize the risk of a convex blend over the simplex by exponentiated
/// gradient with backtracking; vertices are checked at the end so the
/// blend never loses to a single candidate.
pub(crate) fn simplex_weights(family: Family, y: &[f64], preds: &[Vec<f64>]) -> Vec<f64> {
    let m = preds.len();
    let mut w = alloc::vec![1.0 / m as f64; m];
    let mut risk = cv_risk(family, y, &blend(preds, &w));
    let mut eta = 1.0;
    for _ in 0..MAX_ITER {
        let g = gradient(family, y, preds, &blend(preds, &w));
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        let gap = g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - gmin;
        if gap < GAP_TOL {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = w
                .iter()
                .zip(&g)
                .map(|(wj, gj)| wj * libm::exp(-eta * (gj - gmin)))
                .collect();
            let total: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|v| *v /= total);
            let r = cv_risk(family, y, &blend(preds, &trial));
            if r <= risk {
                accepted = r < risk || trial != w;
                w = trial;
                risk = r;
                eta *= 2.0;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    for j in 0..m {
        let r = cv_risk(family, y, &preds[j]);
        if r < risk {
            risk = r;
            w.iter_mut().enumerate().for_each(|(k, v)| *v = f64::from(u8::from(k == j)));
        }
    }
    w
}

fn predictions(model: &FittedModel, x: &DesignMatrix, family: Family) -> Vec<f64> {
    match family {
        Family::Multinomial { .. } => model.predict_classes(x).into_iter().flatten().collect(),
        _ => model.predict(x),
    }
}

/// Fit every candidate, estimate cross-validated risk from held-out
/// predictions, and combine the full-data fits with stacking weights.
pub fn fit_super_learner(
    spec: &LearnerSpec,
    design: &DesignMatrix,
    response: &[f64],
    family: Family,
    seed: u64,
) -> Result<FittedModel> {
    spec.validate()?;
    family.check_response(response)?;
    let n = response.len();
    if n != design.n_rows() {
        return Err(Error::InvalidArgument("response length differs from design rows".into()));
    }
    let mut warnings: Vec<String> = Vec::new();
    if spec.candidates.len() == 1 {
        let fit = spec.candidates[0].fit(design, response, family, rng::derive(seed, &[0, 0]))?;
        return Ok(wrap(alloc::vec![(1.0, fit)], family, n, Vec::new(), warnings));
    }
    if n < spec.cv_folds {
        return Err(Error::InvalidSpec(alloc::format!(
            "{n} rows cannot be split into {} folds",
            spec.cv_folds
        )));
    }

    let folds = cv_folds(response, spec.cv_folds, family, rng::derive(seed, &[1]));
    let d = width(family);
    let mut kept = Vec::new();
    let mut held_out = Vec::new();
    'candidates: for (c, cand) in spec.candidates.iter().enumerate() {
        let mut pred = alloc::vec![0.0; n * d];
        for k in 0..spec.cv_folds {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == k).collect();
            let y: Vec<f64> = train.iter().map(|&i| response[i]).collect();
            let fitted = cand.fit(
                &design.select_rows(&train),
                &y,
                family,
                rng::derive(seed, &[2, c as u64, k as u64]),
            );
            match fitted {
                Ok(m) => {
                    let p = predictions(&m, &design.select_rows(&test), family);
                    for (t, &i) in test.iter().enumerate() {
                        pred[i * d..(i + 1) * d].copy_from_slice(&p[t * d..(t + 1) * d]);
                    }
                }
                Err(e) => {
                    warnings.push(alloc::format!("candidate {} dropped: {e}", cand.name()));
                    continue 'candidates;
                }
            }
        }
        if pred.iter().any(|v| !v.is_finite()) {
            warnings.push(alloc::format!("candidate {} dropped: non-finite predictions", cand.name()));
            continue;
        }
        kept.push(c);
        held_out.push(pred);
    }
    if kept.is_empty() {
        return Err(Error::AllCandidatesFailed(warnings.join("; ")));
    }

    let risks: Vec<(String, f64)> = kept
        .iter()
        .zip(&held_out)
        .map(|(&c, p)| (spec.candidates[c].name(), cv_risk(family, response, p)))
        .collect();
    let weights = match spec.stacking {
        Stacking::DiscreteSelect => {
            let best = risks
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (0..kept.len()).map(|j| f64::from(u8::from(j == best))).collect()
        }
        Stacking::ConvexStack => simplex_weights(family, response, &held_out),
    };

    let mut members = Vec::with_capacity(kept.len());
    for (&c, &w) in kept.iter().zip(&weights) {
        let cand = &spec.candidates[c];
        match cand.fit(design, response, family, rng::derive(seed, &[0, c as u64])) {
            Ok(m) => members.push((w, m)),
            Err(e) if w == 0.0 => {
                warnings.push(alloc::format!("candidate {} dropped: {e}", cand.name()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(wrap(members, family, n, risks, warnings))
}

fn wrap(
    members: Vec<(f64, FittedModel)>,
    family: Family,
    n: usize,
    cv_risk: Vec<(String, f64)>,
    warnings: Vec<String>,
) -> FittedModel {
    FittedModel {
        learner: "super-learner".into(),
        family,
        body: ModelBody::Stack(members),
        meta: FitMetadata {
            n_train: n,
            cv_risk,
            warnings,
            ..FitMetadata::default()
        },
    }
}
