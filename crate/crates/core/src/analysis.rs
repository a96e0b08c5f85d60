//! End-to-end estimation: targets, cross-fitting or full-sample fits,
//! aggregation and inference, producing the `df_A0`, `df_A1` and `df_dif`
//! tables.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crossfit::{run_crossfit, run_no_crossfit, stratum_labels, CrossFitOutput, CrossFitPlan, TABLES};
pub use crate::crossfit::{Executor, Sequential};
use crate::data::{stack_with_external, ExternalSample, MultiSourceDataset, StackedDataset};
use crate::error::{Error, Result};
use crate::estimators::{Population, Target};
pub use crate::inference::EstimateRow;
use crate::inference::{assemble_rows, simultaneous_bands};
use crate::learners::Family;
use crate::nuisance::{NuisanceSpec, TreatmentModelType};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisKind {
    AteInternal,
    AteExternal,
    SteInternal,
    SteExternal,
}

impl AnalysisKind {
    pub fn external(self) -> bool {
        matches!(self, AnalysisKind::AteExternal | AnalysisKind::SteExternal)
    }

    pub fn subgroups(self) -> bool {
        matches!(self, AnalysisKind::SteInternal | AnalysisKind::SteExternal)
    }

    pub fn name(self) -> &'static str {
        match self {
            AnalysisKind::AteInternal => "ate-internal",
            AnalysisKind::AteExternal => "ate-external",
            AnalysisKind::SteInternal => "ste-internal",
            AnalysisKind::SteExternal => "ste-external",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub kind: AnalysisKind,
    pub nuisance: NuisanceSpec,
    pub cross_fitting: bool,
    /// Cross-fitting replications (ignored without cross-fitting).
    pub replications: usize,
    pub seed: u64,
    /// Probabilities are clipped to `[clip, 1 − clip]` when consumed.
    pub clip: f64,
    pub level: f64,
    /// Monte Carlo draws for the simultaneous bands (subgroup analyses).
    pub scb_draws: usize,
}

impl AnalysisConfig {
    pub fn new(kind: AnalysisKind, nuisance: NuisanceSpec) -> AnalysisConfig {
        AnalysisConfig {
            kind,
            nuisance,
            cross_fitting: true,
            replications: 100,
            seed: 0,
            clip: 0.01,
            level: 0.95,
            scb_draws: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.clip) {
            return Err(Error::InvalidArgument(format!("clip must lie in [0, 0.5), got {}", self.clip)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.cross_fitting && self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.kind.subgroups() && self.scb_draws == 0 {
            return Err(Error::InvalidArgument("scb_draws must be positive".into()));
        }
        self.nuisance.validate()
    }
}

/// Learners recorded in the result metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub outcome: Vec<String>,
    pub outcome_family: String,
    pub treatment: Vec<String>,
    pub treatment_model_type: TreatmentModelType,
    pub source: String,
    pub external: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub cross_fitting: bool,
    pub folds: Option<usize>,
    pub replications: usize,
    pub seed: u64,
    pub clip_epsilon: f64,
    pub level: f64,
    pub variance_averaging: Option<String>,
    pub scb_draws: Option<usize>,
    /// Sup-t critical values for the A=0, A=1 and difference tables.
    pub scb_critical_values: Option<Vec<f64>>,
    pub learners: LearnerSummary,
    /// Rows per internal source, in canonical source order.
    pub source_sizes: Vec<(String, usize)>,
    pub external_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub analysis: AnalysisKind,
    #[serde(rename = "df_A0")]
    pub df_a0: Vec<EstimateRow>,
    #[serde(rename = "df_A1")]
    pub df_a1: Vec<EstimateRow>,
    pub df_dif: Vec<EstimateRow>,
    pub metadata: RunMetadata,
    pub warnings: Vec<String>,
}

impl AnalysisResult {
    pub fn table(&self, index: usize) -> &[EstimateRow] {
        match index {
            0 => &self.df_a0,
            1 => &self.df_a1,
            _ => &self.df_dif,
        }
    }
}

/// Targets in reporting order: sources (canonical order) then subgroups.
pub fn targets_for(kind: AnalysisKind, data: &StackedDataset) -> Vec<Target> {
    let subgroups: Vec<Option<u32>> = if kind.subgroups() {
        (0..data.em_levels().len() as u32).map(Some).collect()
    } else {
        alloc::vec![None]
    };
    let populations: Vec<Population> = if kind.external() {
        alloc::vec![Population::External]
    } else {
        (0..data.n_sources()).map(Population::Internal).collect()
    };
    populations
        .into_iter()
        .flat_map(|population| subgroups.iter().map(move |&subgroup| Target { population, subgroup }))
        .collect()
}

/// Check preconditions and build the frame the estimators run on.
pub fn prepare(
    kind: AnalysisKind,
    data: &MultiSourceDataset,
    external: Option<&ExternalSample>,
) -> Result<StackedDataset> {
    if kind.subgroups() && data.effect_modifier().is_none() {
        return Err(Error::MissingRole("effect_modifier".into()));
    }
    if kind.external() {
        let external = external.ok_or_else(|| Error::MissingRole("external covariate data".into()))?;
        if kind.subgroups() && external.effect_modifier().is_none() {
            return Err(Error::MissingRole("effect_modifier (external)".into()));
        }
        stack_with_external(data, external)
    } else {
        Ok(StackedDataset::internal(data))
    }
}

const SCB_KEY: u64 = 0x5CB;

/// Run one analysis end to end.
pub fn run_analysis<E: Executor>(
    config: &AnalysisConfig,
    data: &MultiSourceDataset,
    external: Option<&ExternalSample>,
    executor: &E,
) -> Result<AnalysisResult> {
    config.validate()?;
    if config.nuisance.outcome_family == Family::Binomial {
        if let Some((row, &value)) = data.outcome().iter().enumerate().find(|(_, &y)| y != 0.0 && y != 1.0) {
            return Err(Error::OutcomeNotBinary { row: row + 1, value });
        }
    }
    let kind = config.kind;
    let stacked = prepare(kind, data, external)?;
    let targets = targets_for(kind, &stacked);
    let rows = stacked.all_rows();
    let folds = CrossFitPlan::folds_for(kind.external());
    let output: CrossFitOutput = if config.cross_fitting {
        let strata = stratum_labels(&stacked, &rows, kind.subgroups());
        let plan = CrossFitPlan {
            folds,
            replications: config.replications,
            seed: config.seed,
        };
        run_crossfit(&stacked, &rows, &strata, &targets, &config.nuisance, &plan, config.clip, executor)?
    } else {
        run_no_crossfit(&stacked, &rows, &targets, &config.nuisance, kind.external(), config.seed, config.clip)?
    };

    let labels: Vec<(String, Option<String>)> = targets
        .iter()
        .map(|t| {
            let population = match t.population {
                Population::Internal(s) => stacked.source_labels()[s].clone(),
                Population::External => String::from("external"),
            };
            (population, t.subgroup.map(|g| stacked.em_levels()[g as usize].clone()))
        })
        .collect();
    let mut warnings = output.warnings.clone();
    let mut critical = Vec::new();
    let tables: Vec<Vec<EstimateRow>> = (0..TABLES)
        .map(|t| {
            let agg = &output.aggregate;
            let se: Vec<f64> = agg.variance[t].iter().map(|v| libm::sqrt(v.max(0.0))).collect();
            if kind.subgroups() {
                let (bands, c) = simultaneous_bands(
                    &agg.point[t],
                    &se,
                    &agg.correlation[t],
                    config.level,
                    config.scb_draws,
                    rng::derive(config.seed, &[SCB_KEY, t as u64]),
                    executor,
                );
                if c.projected {
                    warnings.push(format!(
                        "{}: estimated correlation matrix projected to the nearest correlation matrix",
                        TABLE_NAMES[t]
                    ));
                }
                critical.push(c.value);
                assemble_rows(&labels, &agg.point[t], &se, config.level, Some(&bands))
            } else {
                assemble_rows(&labels, &agg.point[t], &se, config.level, None)
            }
        })
        .collect();
    let [df_a0, df_a1, df_dif]: [Vec<EstimateRow>; 3] = tables.try_into().expect("three tables");

    let spec = &config.nuisance;
    let mut source_sizes: Vec<(String, usize)> = data.source_labels().iter().map(|l| (l.clone(), 0)).collect();
    data.source().iter().for_each(|&s| source_sizes[s as usize].1 += 1);
    let metadata = RunMetadata {
        cross_fitting: config.cross_fitting,
        folds: config.cross_fitting.then_some(folds),
        replications: if config.cross_fitting { config.replications } else { 1 },
        seed: config.seed,
        clip_epsilon: config.clip,
        level: config.level,
        variance_averaging: config
            .cross_fitting
            .then(|| String::from("split variances summed and divided by K^2; replications combined by medians")),
        scb_draws: kind.subgroups().then_some(config.scb_draws),
        scb_critical_values: kind.subgroups().then_some(critical),
        learners: LearnerSummary {
            outcome: spec.outcome.candidate_names(),
            outcome_family: String::from(spec.outcome_family.name()),
            treatment: spec.treatment.candidate_names(),
            treatment_model_type: spec.treatment_type,
            source: String::from(spec.source.name()),
            external: kind.external().then(|| spec.external.candidate_names()),
        },
        source_sizes,
        external_size: kind.external().then(|| stacked.n_external()),
    };
    Ok(AnalysisResult {
        analysis: kind,
        df_a0,
        df_a1,
        df_dif,
        metadata,
        warnings,
    })
}

pub const TABLE_NAMES: [&str; TABLES] = ["df_A0", "df_A1", "df_dif"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, CovariateTable, EffectModifier, Categorical};
    use crate::learners::LearnerSpec;
    use alloc::string::ToString;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dataset(n_per: usize, seed: u64, shift: f64) -> (MultiSourceDataset, ExternalSample) {
        let mut r = rng::stream(seed);
        let (mut x, mut em, mut s, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for src in 0..2 {
            for _ in 0..n_per {
                let xi: f64 = r.sample::<f64, _>(StandardNormal) + 0.3 * src as f64;
                let g = if xi + r.sample::<f64, _>(StandardNormal) > 0.0 { "hi" } else { "lo" };
                let p = 1.0 / (1.0 + libm::exp(-(0.3 * xi)));
                let t = u8::from(r.random::<f64>() < p);
                let yi = 1.0 + xi + shift + f64::from(t) * (2.0 + 0.5 * xi) + r.sample::<f64, _>(StandardNormal);
                x.push(xi);
                em.push(g);
                s.push(["A", "B"][src].to_string());
                a.push(t);
                y.push(yi);
            }
        }
        let n = x.len();
        let table = CovariateTable::new(alloc::vec![Covariate::numeric("x", x)], n).unwrap();
        let em = EffectModifier {
            name: "em".into(),
            values: Categorical::from_labels(&em),
        };
        let data = MultiSourceDataset::new(y, &s, a, table, Some(em)).unwrap();
        let xe: Vec<f64> = (0..300).map(|_| r.sample::<f64, _>(StandardNormal) + 0.5).collect();
        let ge: Vec<&str> = xe.iter().map(|v| if *v > 0.4 { "hi" } else { "lo" }).collect();
        let ext = ExternalSample::new(
            CovariateTable::new(alloc::vec![Covariate::numeric("x", xe)], 300).unwrap(),
            Some(EffectModifier {
                name: "em".into(),
                values: Categorical::from_labels(&ge),
            }),
        )
        .unwrap();
        (data, ext)
    }

    fn config(kind: AnalysisKind, cross_fitting: bool) -> AnalysisConfig {
        let mut c = AnalysisConfig::new(kind, NuisanceSpec::parametric());
        c.cross_fitting = cross_fitting;
        c.replications = 3;
        c.seed = 17;
        c.scb_draws = 5_000;
        c
    }

    #[test]
    fn table_shapes_per_analysis() {
        let (data, ext) = dataset(200, 1, 0.0);
        let r = run_analysis(&config(AnalysisKind::AteInternal, false), &data, None, &Sequential).unwrap();
        assert_eq!(r.df_dif.len(), 2);
        assert!(r.df_dif.iter().all(|row| row.scb_lower.is_none()));
        let r = run_analysis(&config(AnalysisKind::SteInternal, false), &data, None, &Sequential).unwrap();
        assert_eq!(r.df_dif.len(), 4);
        for row in r.df_dif.iter().chain(&r.df_a0).chain(&r.df_a1) {
            assert!(row.scb_lower.unwrap() <= row.ci_lower && row.scb_upper.unwrap() >= row.ci_upper);
        }
        let r = run_analysis(&config(AnalysisKind::SteExternal, true), &data, Some(&ext), &Sequential).unwrap();
        assert_eq!(r.df_dif.len(), 2);
        assert_eq!(r.metadata.folds, Some(5));
        assert_eq!(r.df_dif[0].target, "external");
    }

    #[test]
    fn no_crossfit_difference_is_arm_difference() {
        let (data, ext) = dataset(200, 2, 0.0);
        let r = run_analysis(&config(AnalysisKind::AteExternal, false), &data, Some(&ext), &Sequential).unwrap();
        assert_eq!(r.df_dif[0].estimate, r.df_a1[0].estimate - r.df_a0[0].estimate);
        assert_eq!(r.metadata.folds, None);
    }

    #[test]
    fn location_shift_moves_arms_but_not_effects() {
        for kind in [AnalysisKind::AteInternal, AnalysisKind::SteExternal] {
            for cf in [false, true] {
                let (d0, ext) = dataset(150, 3, 0.0);
                let (d1, _) = dataset(150, 3, 7.5);
                let a = run_analysis(&config(kind, cf), &d0, Some(&ext), &Sequential).unwrap();
                let b = run_analysis(&config(kind, cf), &d1, Some(&ext), &Sequential).unwrap();
                for (x, y) in a.df_dif.iter().zip(&b.df_dif) {
                    assert!((x.estimate - y.estimate).abs() < 1e-9);
                    assert!((x.se - y.se).abs() < 1e-9);
                }
                for (x, y) in a.df_a0.iter().zip(&b.df_a0) {
                    assert!((y.estimate - x.estimate - 7.5).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn subgroup_analysis_requires_effect_modifier() {
        let (data, _) = dataset(50, 4, 0.0);
        let data = data.without_effect_modifier();
        let err = run_analysis(&config(AnalysisKind::SteInternal, false), &data, None, &Sequential).unwrap_err();
        assert!(matches!(err, Error::MissingRole(ref r) if r == "effect_modifier"));
        let err = run_analysis(&config(AnalysisKind::AteExternal, false), &data, None, &Sequential).unwrap_err();
        assert!(matches!(err, Error::MissingRole(_)));
    }

    #[test]
    fn crossfit_error_names_split() {
        let (data, _) = dataset(30, 5, 0.0);
        let mut c = config(AnalysisKind::AteInternal, true);
        c.nuisance.outcome = LearnerSpec::glm();
        c.nuisance.treatment_type = TreatmentModelType::Separate;
        // Tiny strata make some separate treatment fold single-armed or
        // separated; either way the error carries the split position.
        if let Err(e) = run_analysis(&c, &data, None, &Sequential) {
            assert!(e.to_string().contains("replication"));
        }
        let (small, _) = dataset(3, 5, 0.0);
        let err = run_analysis(&config(AnalysisKind::AteInternal, true), &small, None, &Sequential).unwrap_err();
        assert!(matches!(err, Error::StratumTooSmall { .. }));
    }

    #[test]
    fn deterministic_across_runs() {
        let (data, ext) = dataset(120, 6, 0.0);
        let c = config(AnalysisKind::SteExternal, true);
        let a = run_analysis(&c, &data, Some(&ext), &Sequential).unwrap();
        let b = run_analysis(&c, &data, Some(&ext), &Sequential).unwrap();
        assert_eq!(a, b);
    }
}
