//! Candidate prediction models and the stacking ensemble.
//!
//! Every fit is a pure function of `(design, response, family, seed)`.
//! Probability predictions are returned unclipped; consumers clip.

mod glm;
mod lasso;
mod multinomial;
mod nnet;
mod stack;

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::stats::{logistic, softmax_in_place};

pub use glm::fit_glm;
pub use lasso::{fit_lasso, LassoOptions, LambdaChoice};
pub use multinomial::{fit_multinomial, MultinomialPenalty};
pub use nnet::{fit_nnet, NnetOptions};
pub use stack::{cv_risk, fit_super_learner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Gaussian response, identity link.
    Gaussian,
    /// 0/1 response, logit link.
    Binomial,
    /// Class labels `0..classes`, softmax link.
    #[serde(skip)]
    Multinomial { classes: usize },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
            Family::Multinomial { .. } => "multinomial",
        }
    }

    pub(crate) fn check_response(&self, y: &[f64]) -> Result<()> {
        match self {
            Family::Gaussian => {
                if y.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("non-finite gaussian response".into()))
                }
            }
            Family::Binomial => match y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                None => Ok(()),
                Some(v) => Err(Error::InvalidArgument(alloc::format!(
                    "binomial response must be 0/1, found {v}"
                ))),
            },
            Family::Multinomial { classes } => {
                match y.iter().find(|&&v| v < 0.0 || v >= *classes as f64 || v != libm::trunc(v)) {
                    None => Ok(()),
                    Some(v) => Err(Error::InvalidArgument(alloc::format!(
                        "multinomial label {v} outside 0..{classes}"
                    ))),
                }
            }
        }
    }
}

/// A user-supplied learner.
pub trait Learner: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn fit(&self, x: &DesignMatrix, y: &[f64], family: Family, seed: u64) -> Result<FittedModel>;
}

/// Prediction contract for custom fitted models: one value per design row
/// (the mean for gaussian, `P(y = 1)` for binomial).
pub trait Predictor: Send + Sync + fmt::Debug {
    fn predict(&self, x: &DesignMatrix) -> Vec<f64>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitMetadata {
    pub n_train: usize,
    pub iterations: usize,
    /// Max absolute score (log-likelihood gradient) at the returned fit.
    pub gradient_max: Option<f64>,
    /// Penalty chosen by cross-validation (lasso).
    pub lambda: Option<f64>,
    /// Cross-validated risk per candidate (stacking).
    pub cv_risk: Vec<(String, f64)>,
    /// Whether the rank-deficiency ridge fallback fired.
    pub ridge_fallback: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) enum ModelBody {
    Linear(Vec<f64>),
    Constant(f64),
    /// One coefficient row per class; row 0 is the reference class (zeros).
    Multinomial(Vec<Vec<f64>>),
    Net(nnet::Network),
    Stack(Vec<(f64, FittedModel)>),
    Custom(Arc<dyn Predictor>),
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub learner: String,
    pub family: Family,
    pub(crate) body: ModelBody,
    pub meta: FitMetadata,
}

impl FittedModel {
    pub fn custom(
        learner: impl Into<String>,
        family: Family,
        predictor: Arc<dyn Predictor>,
        n_train: usize,
    ) -> FittedModel {
        FittedModel {
            learner: learner.into(),
            family,
            body: ModelBody::Custom(predictor),
            meta: FitMetadata {
                n_train,
                ..FitMetadata::default()
            },
        }
    }

    pub(crate) fn constant(learner: &str, family: Family, value: f64, n_train: usize) -> FittedModel {
        FittedModel {
            learner: learner.to_string(),
            family,
            body: ModelBody::Constant(value),
            meta: FitMetadata {
                n_train,
                ..FitMetadata::default()
            },
        }
    }

    /// Linear-predictor coefficients (GLM/lasso), on the original design scale.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.body {
            ModelBody::Linear(b) => Some(b),
            _ => None,
        }
    }

    /// Class coefficient rows of a multinomial model.
    pub fn class_coefficients(&self) -> Option<&[Vec<f64>]> {
        match &self.body {
            ModelBody::Multinomial(b) => Some(b),
            _ => None,
        }
    }

    /// Stacking weights in candidate order, when this is an ensemble.
    pub fn stack_weights(&self) -> Option<Vec<(String, f64)>> {
        match &self.body {
            ModelBody::Stack(m) => Some(m.iter().map(|(w, f)| (f.learner.clone(), *w)).collect()),
            _ => None,
        }
    }

    /// Mean prediction per row (`P(y = 1)` for binomial).
    pub fn predict(&self, x: &DesignMatrix) -> Vec<f64> {
        let n = x.n_rows();
        match &self.body {
            ModelBody::Linear(beta) => {
                let eta = linear_predictor(x, beta);
                match self.family {
                    Family::Binomial => eta.into_iter().map(logistic).collect(),
                    _ => eta,
                }
            }
            ModelBody::Constant(v) => alloc::vec![*v; n],
            ModelBody::Multinomial(_) => {
                // Probability of the last class versus the rest.
                self.predict_classes(x)
                    .into_iter()
                    .map(|row| *row.last().unwrap())
                    .collect()
            }
            ModelBody::Net(net) => net.predict(x).into_iter().map(|r| r[0]).collect(),
            ModelBody::Stack(members) => {
                let mut out = alloc::vec![0.0; n];
                for (w, m) in members {
                    if *w == 0.0 {
                        continue;
                    }
                    for (o, p) in out.iter_mut().zip(m.predict(x)) {
                        *o += w * p;
                    }
                }
                out
            }
            ModelBody::Custom(p) => p.predict(x),
        }
    }

    /// Class probabilities per row (`n × K`), rows summing to one.
    pub fn predict_classes(&self, x: &DesignMatrix) -> Vec<Vec<f64>> {
        match &self.body {
            ModelBody::Multinomial(rows) => {
                let etas: Vec<Vec<f64>> = rows.iter().map(|b| linear_predictor(x, b)).collect();
                (0..x.n_rows())
                    .map(|i| {
                        let mut e: Vec<f64> = etas.iter().map(|col| col[i]).collect();
                        softmax_in_place(&mut e);
                        e
                    })
                    .collect()
            }
            ModelBody::Net(net) if matches!(self.family, Family::Multinomial { .. }) => net.predict(x),
            ModelBody::Stack(members) => {
                let mut out: Option<Vec<Vec<f64>>> = None;
                for (w, m) in members {
                    let p = m.predict_classes(x);
                    match &mut out {
                        None => {
                            out = Some(p.into_iter().map(|r| r.into_iter().map(|v| w * v).collect()).collect())
                        }
                        Some(acc) => {
                            for (a, r) in acc.iter_mut().zip(p) {
                                for (av, v) in a.iter_mut().zip(r) {
                                    *av += w * v;
                                }
                            }
                        }
                    }
                }
                out.unwrap_or_default()
            }
            _ => self
                .predict(x)
                .into_iter()
                .map(|p| alloc::vec![1.0 - p, p])
                .collect(),
        }
    }
}

pub(crate) fn linear_predictor(x: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    let m = x.values();
    let mut eta = alloc::vec![0.0; m.nrows()];
    for (j, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (e, v) in eta.iter_mut().zip(m.column(j).iter()) {
            *e += b * v;
        }
    }
    eta
}

fn default_nlambda() -> usize {
    100
}
fn default_ratio() -> f64 {
    1e-3
}
fn default_cv() -> usize {
    10
}
fn default_hidden() -> usize {
    2
}
fn default_steps() -> usize {
    2000
}
fn default_lr() -> f64 {
    0.05
}

/// One candidate in a learner library.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Candidate {
    /// Unpenalized GLM fit by IRLS.
    Glm,
    /// L1-penalized GLM, λ chosen by cross-validated deviance.
    Lasso {
        #[serde(default = "default_nlambda")]
        nlambda: usize,
        #[serde(default = "default_ratio")]
        lambda_min_ratio: f64,
        #[serde(default = "default_cv")]
        cv_folds: usize,
        /// Fixed penalty; skips the path and cross-validation.
        #[serde(default)]
        lambda: Option<f64>,
    },
    /// Single-hidden-layer network.
    Nnet {
        #[serde(default = "default_hidden")]
        hidden_units: usize,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_lr")]
        learning_rate: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn Learner>),
}

impl Candidate {
    pub fn lasso() -> Candidate {
        Candidate::Lasso {
            nlambda: default_nlambda(),
            lambda_min_ratio: default_ratio(),
            cv_folds: default_cv(),
            lambda: None,
        }
    }

    pub fn nnet(hidden_units: usize) -> Candidate {
        Candidate::Nnet {
            hidden_units,
            steps: default_steps(),
            learning_rate: default_lr(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Candidate::Glm => "glm".into(),
            Candidate::Lasso { .. } => "lasso".into(),
            Candidate::Nnet { .. } => "nnet".into(),
            Candidate::Custom(l) => l.name().to_string(),
        }
    }

    pub fn fit(&self, x: &DesignMatrix, y: &[f64], family: Family, seed: u64) -> Result<FittedModel> {
        match self {
            Candidate::Glm => fit_glm(x, y, family, None),
            Candidate::Lasso {
                nlambda,
                lambda_min_ratio,
                cv_folds,
                lambda,
            } => {
                let options = LassoOptions {
                    lambda: match lambda {
                        Some(l) => LambdaChoice::Fixed(*l),
                        None => LambdaChoice::Path {
                            nlambda: *nlambda,
                            min_ratio: *lambda_min_ratio,
                        },
                    },
                    cv_folds: *cv_folds,
                    standardize: true,
                };
                fit_lasso(x, y, family, &options, seed)
            }
            Candidate::Nnet {
                hidden_units,
                steps,
                learning_rate,
            } => fit_nnet(
                x,
                y,
                family,
                &NnetOptions {
                    hidden_units: *hidden_units,
                    steps: *steps,
                    learning_rate: *learning_rate,
                },
                seed,
            ),
            Candidate::Custom(l) => l.fit(x, y, family, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stacking {
    /// Weight 1 on the candidate with the smallest cross-validated risk.
    DiscreteSelect,
    /// Simplex weights minimizing cross-validated risk.
    #[default]
    ConvexStack,
}

/// Candidate library plus stacking policy for one nuisance model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub stacking: Stacking,
    #[serde(default = "default_cv")]
    pub cv_folds: usize,
}

impl LearnerSpec {
    pub fn single(candidate: Candidate) -> LearnerSpec {
        LearnerSpec {
            candidates: alloc::vec![candidate],
            stacking: Stacking::ConvexStack,
            cv_folds: default_cv(),
        }
    }

    pub fn glm() -> LearnerSpec {
        Self::single(Candidate::Glm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidSpec("candidate list is empty".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidSpec("cv_folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn candidate_names(&self) -> Vec<String> {
        self.candidates.iter().map(Candidate::name).collect()
    }
}
