//! Outcome, source, treatment and external-membership models.
//!
//! Every model is fit on a caller-chosen row subset of a [`StackedDataset`]
//! and predicts on another subset, so the same code serves cross-fitted
//! and full-sample estimation. The effect modifier, when present, enters
//! each model as an ordinary categorical covariate.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{DesignOptions, Encoder, StackedDataset};
use crate::error::{Error, Result};
use crate::learners::{
    fit_multinomial, fit_nnet, fit_super_learner, Family, FittedModel, LassoOptions, LearnerSpec,
    MultinomialPenalty, NnetOptions,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentModelType {
    /// One model regressing A on X and source indicators.
    #[default]
    Joint,
    /// One model per source regressing A on X.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceModel {
    /// Lasso-penalized multinomial logistic regression.
    #[default]
    MnLasso,
    /// Unpenalized multinomial logistic regression.
    MnGlm,
    /// Softmax network with two hidden units.
    MnNnet,
}

impl SourceModel {
    pub fn name(&self) -> &'static str {
        match self {
            SourceModel::MnLasso => "mn-lasso",
            SourceModel::MnGlm => "mn-glm",
            SourceModel::MnNnet => "mn-nnet",
        }
    }
}

/// Learner choices for the four nuisance functions.
#[derive(Debug, Clone)]
pub struct NuisanceSpec {
    pub outcome: LearnerSpec,
    /// Gaussian or binomial.
    pub outcome_family: Family,
    pub treatment: LearnerSpec,
    pub treatment_type: TreatmentModelType,
    pub source: SourceModel,
    pub external: LearnerSpec,
}

impl NuisanceSpec {
    /// Unpenalized parametric models throughout.
    pub fn parametric() -> NuisanceSpec {
        NuisanceSpec {
            outcome: LearnerSpec::glm(),
            outcome_family: Family::Gaussian,
            treatment: LearnerSpec::glm(),
            treatment_type: TreatmentModelType::Joint,
            source: SourceModel::MnGlm,
            external: LearnerSpec::glm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.outcome_family, Family::Multinomial { .. }) {
            return Err(Error::InvalidSpec("outcome family must be gaussian or binomial".into()));
        }
        self.outcome.validate()?;
        self.treatment.validate()?;
        self.external.validate()
    }
}

/// P(A = 1 | X, S = s) for every internal source.
#[derive(Debug, Clone)]
pub enum TreatmentFit {
    Joint(FittedModel),
    Separate(Vec<FittedModel>),
}

/// Row subsets each nuisance model is trained on.
#[derive(Debug, Clone, Copy)]
pub struct TrainingRows<'a> {
    pub outcome: &'a [usize],
    pub treatment: &'a [usize],
    pub source: &'a [usize],
    /// `None` when the target is internal.
    pub external: Option<&'a [usize]>,
}

impl<'a> TrainingRows<'a> {
    /// Every model trained on the same rows.
    pub fn all(rows: &'a [usize], external: bool) -> TrainingRows<'a> {
        TrainingRows {
            outcome: rows,
            treatment: rows,
            source: rows,
            external: external.then_some(rows),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceFits {
    /// Per-arm outcome regressions, indexed by arm.
    pub outcome: [FittedModel; 2],
    /// `None` with a single source (probability one).
    pub source: Option<FittedModel>,
    pub treatment: TreatmentFit,
    pub external: Option<FittedModel>,
    covariates: Encoder,
    with_source: Encoder,
    n_sources: usize,
}

/// Nuisance predictions aligned with a list of evaluation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    /// Predicted outcome mean under each arm.
    pub outcome: [Vec<f64>; 2],
    /// `rows × m` source probabilities among internal sources.
    pub source: Vec<Vec<f64>>,
    /// `rows × m` values of P(A = 1 | X, S = s).
    pub treatment: Vec<Vec<f64>>,
    /// P(S = 0 | X) when an external model was fit.
    pub external: Option<Vec<f64>>,
}

fn covariate_encoder(data: &StackedDataset) -> Encoder {
    Encoder::new(
        data,
        DesignOptions {
            effect_modifier: true,
            source: false,
            treatment: false,
        },
    )
}

fn source_encoder(data: &StackedDataset) -> Encoder {
    Encoder::new(
        data,
        DesignOptions {
            effect_modifier: true,
            source: true,
            treatment: false,
        },
    )
}

const OUTCOME_SEED: u64 = 1;
const TREATMENT_SEED: u64 = 2;
const SOURCE_SEED: u64 = 3;
const EXTERNAL_SEED: u64 = 4;

/// Regress Y on X within each arm, using the internal rows of `rows`.
pub fn fit_outcome_model(
    data: &StackedDataset,
    rows: &[usize],
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<[FittedModel; 2]> {
    let encoder = covariate_encoder(data);
    let fit_arm = |a: u8| -> Result<FittedModel> {
        let arm: Vec<usize> = rows.iter().copied().filter(|&r| data.treatment(r) == Some(a)).collect();
        if arm.len() < 2 {
            return Err(Error::EmptyArm(a));
        }
        let y: Vec<f64> = arm.iter().map(|&r| data.outcome(r).unwrap_or(f64::NAN)).collect();
        fit_super_learner(
            &spec.outcome,
            &encoder.encode(data, &arm),
            &y,
            spec.outcome_family,
            rng::derive(seed, &[OUTCOME_SEED, u64::from(a)]),
        )
    };
    Ok([fit_arm(0)?, fit_arm(1)?])
}

fn require_sources(data: &StackedDataset, rows: &[usize]) -> Result<Vec<usize>> {
    let mut seen = alloc::vec![false; data.n_sources()];
    let internal: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&r| match data.source_of(r) {
            Some(s) => {
                seen[s] = true;
                true
            }
            None => false,
        })
        .collect();
    if let Some(s) = seen.iter().position(|x| !x) {
        return Err(Error::MissingSource(data.source_labels()[s].clone()));
    }
    Ok(internal)
}

/// P(S = s | X) over internal sources; `None` when there is one source.
pub fn fit_source_model(
    data: &StackedDataset,
    rows: &[usize],
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<Option<FittedModel>> {
    let internal = require_sources(data, rows)?;
    let m = data.n_sources();
    if m == 1 {
        return Ok(None);
    }
    let x = covariate_encoder(data).encode(data, &internal);
    let labels: Vec<usize> = internal.iter().map(|&r| data.source_of(r).unwrap_or(0)).collect();
    let seed = rng::derive(seed, &[SOURCE_SEED]);
    let fit = match spec.source {
        SourceModel::MnGlm => fit_multinomial(&x, &labels, m, MultinomialPenalty::None, seed)?,
        SourceModel::MnLasso => {
            let mut options = LassoOptions::default();
            options.cv_folds = options.cv_folds.min(internal.len());
            fit_multinomial(&x, &labels, m, MultinomialPenalty::Lasso(options), seed)?
        }
        SourceModel::MnNnet => {
            let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            fit_nnet(&x, &y, Family::Multinomial { classes: m }, &NnetOptions::default(), seed)?
        }
    };
    Ok(Some(fit))
}

/// P(A = 1 | X, S = s), jointly with source indicators or per source.
pub fn fit_treatment_model(
    data: &StackedDataset,
    rows: &[usize],
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<TreatmentFit> {
    let internal = require_sources(data, rows)?;
    let seed = rng::derive(seed, &[TREATMENT_SEED]);
    let response = |rows: &[usize]| -> Vec<f64> {
        rows.iter().map(|&r| f64::from(data.treatment(r).unwrap_or(0))).collect()
    };
    let both_arms = |rows: &[usize]| {
        let treated = rows.iter().filter(|&&r| data.treatment(r) == Some(1)).count();
        (treated, rows.len() - treated)
    };
    match spec.treatment_type {
        TreatmentModelType::Joint => {
            match both_arms(&internal) {
                (0, _) => return Err(Error::EmptyArm(1)),
                (_, 0) => return Err(Error::EmptyArm(0)),
                _ => {}
            }
            let x = source_encoder(data).encode(data, &internal);
            let fit = fit_super_learner(&spec.treatment, &x, &response(&internal), Family::Binomial, seed)?;
            Ok(TreatmentFit::Joint(fit))
        }
        TreatmentModelType::Separate => {
            let encoder = covariate_encoder(data);
            let mut fits = Vec::with_capacity(data.n_sources());
            for s in 0..data.n_sources() {
                let subset: Vec<usize> =
                    internal.iter().copied().filter(|&r| data.source_of(r) == Some(s)).collect();
                let (treated, control) = both_arms(&subset);
                if treated == 0 || control == 0 {
                    return Err(Error::SingleArmSource(data.source_labels()[s].clone()));
                }
                fits.push(fit_super_learner(
                    &spec.treatment,
                    &encoder.encode(data, &subset),
                    &response(&subset),
                    Family::Binomial,
                    rng::derive(seed, &[s as u64]),
                )?);
            }
            Ok(TreatmentFit::Separate(fits))
        }
    }
}

/// P(S = 0 | X) from stacked internal and external rows.
pub fn fit_external_model(
    data: &StackedDataset,
    rows: &[usize],
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<FittedModel> {
    let y: Vec<f64> = rows
        .iter()
        .map(|&r| f64::from(u8::from(data.source_of(r).is_none())))
        .collect();
    let external = y.iter().filter(|&&v| v == 1.0).count();
    if external == 0 {
        return Err(Error::NoExternalRows);
    }
    if external == rows.len() {
        return Err(Error::InvalidArgument("external model needs internal rows".into()));
    }
    let x = covariate_encoder(data).encode(data, rows);
    fit_super_learner(
        &spec.external,
        &x,
        &y,
        Family::Binomial,
        rng::derive(seed, &[EXTERNAL_SEED]),
    )
}

/// Fit all nuisance models required for a target.
pub fn fit_nuisances(
    data: &StackedDataset,
    rows: TrainingRows<'_>,
    spec: &NuisanceSpec,
    seed: u64,
) -> Result<NuisanceFits> {
    spec.validate()?;
    Ok(NuisanceFits {
        outcome: fit_outcome_model(data, rows.outcome, spec, seed)?,
        source: fit_source_model(data, rows.source, spec, seed)?,
        treatment: fit_treatment_model(data, rows.treatment, spec, seed)?,
        external: rows
            .external
            .map(|r| fit_external_model(data, r, spec, seed))
            .transpose()?,
        covariates: covariate_encoder(data),
        with_source: source_encoder(data),
        n_sources: data.n_sources(),
    })
}

impl NuisanceFits {
    pub fn predict(&self, data: &StackedDataset, rows: &[usize]) -> NuisancePredictions {
        let x = self.covariates.encode(data, rows);
        let m = self.n_sources;
        let source = match &self.source {
            Some(fit) => fit.predict_classes(&x),
            None => alloc::vec![alloc::vec![1.0]; rows.len()],
        };
        let mut treatment = alloc::vec![alloc::vec![0.0; m]; rows.len()];
        for s in 0..m {
            let p = match &self.treatment {
                TreatmentFit::Joint(fit) => fit.predict(&self.with_source.encode_as_source(data, rows, s)),
                TreatmentFit::Separate(fits) => fits[s].predict(&x),
            };
            for (row, v) in treatment.iter_mut().zip(p) {
                row[s] = v;
            }
        }
        NuisancePredictions {
            outcome: [self.outcome[0].predict(&x), self.outcome[1].predict(&x)],
            source,
            treatment,
            external: self.external.as_ref().map(|f| f.predict(&x)),
        }
    }

    /// Warnings raised while fitting, prefixed by model.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |model: &str, fit: &FittedModel| {
            for w in &fit.meta.warnings {
                out.push(alloc::format!("{model}: {w}"));
            }
            if fit.meta.ridge_fallback {
                out.push(alloc::format!("{model}: rank-deficient design, ridge fallback applied"));
            }
            if let crate::learners::ModelBody::Stack(members) = &fit.body {
                for (_, m) in members {
                    if m.meta.ridge_fallback {
                        out.push(alloc::format!(
                            "{model}: rank-deficient design in {}, ridge fallback applied",
                            m.learner
                        ));
                    }
                }
            }
        };
        push("outcome model (A=0)", &self.outcome[0]);
        push("outcome model (A=1)", &self.outcome[1]);
        if let Some(f) = &self.source {
            push("source model", f);
        }
        match &self.treatment {
            TreatmentFit::Joint(f) => push("treatment model", f),
            TreatmentFit::Separate(fs) => fs.iter().for_each(|f| push("treatment model", f)),
        }
        if let Some(f) = &self.external {
            push("external model", f);
        }
        out
    }
}

/// Σₛ P(A = a | X, S = s)·P(S = s | X), with the source weights
/// renormalized over the sources supplied.
pub fn marginal_propensity(treatment: &[f64], source: &[f64], a: u8) -> f64 {
    let total: f64 = source.iter().sum();
    let p1 = treatment.iter().zip(source).map(|(e, q)| e * q).sum::<f64>() / total;
    if a == 1 {
        p1
    } else {
        1.0 - p1
    }
}
