//! Stratified sample splitting, nuisance-role rotation and aggregation of
//! repeated cross-fitted estimates.
//!
//! Each replication splits the evaluation rows into `K` folds stratified by
//! source (and effect-modifier level, and the external indicator when
//! relevant). For split `k` the estimators are evaluated on fold `k` while
//! the outcome, treatment, source and external models are each trained on
//! one other fold. Replications are then combined by medians.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::StackedDataset;
use crate::error::{Error, Result};
use crate::estimators::{
    effect_from_arms, estimate_arm_external, estimate_arm_internal, EffectEstimate, Population,
    Target,
};
use crate::nuisance::{fit_nuisances, NuisancePredictions, NuisanceSpec, TrainingRows};
use crate::rng;
use crate::stats::{mean, median};

/// Runs independent jobs, possibly concurrently, returning results in index
/// order so downstream reductions never depend on scheduling.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Quantities reported per target: the two arm means and their difference.
pub const TABLES: usize = 3;
pub const ARM0: usize = 0;
pub const ARM1: usize = 1;
pub const DIFFERENCE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossFitPlan {
    /// 4 for internal targets, 5 for external targets.
    pub folds: usize,
    pub replications: usize,
    pub seed: u64,
}

impl CrossFitPlan {
    pub fn folds_for(external: bool) -> usize {
        if external {
            5
        } else {
            4
        }
    }
}

/// Canonical stratum label of every row in `rows`.
pub fn stratum_labels(data: &StackedDataset, rows: &[usize], by_subgroup: bool) -> Vec<String> {
    rows.iter()
        .map(|&r| {
            let mut label = match data.source_of(r) {
                Some(s) => format!("source {}", data.source_labels()[s]),
                None => String::from("external"),
            };
            if by_subgroup {
                if let Some(g) = data.em_code(r) {
                    label.push_str(" / subgroup ");
                    label.push_str(&data.em_levels()[g as usize]);
                }
            }
            label
        })
        .collect()
}

/// Fold index (0-based) for every position of `strata`.
///
/// Within a stratum the rows are shuffled by a stream keyed on the stratum
/// label and dealt round-robin into the folds. Each stratum starts dealing
/// where the previous one (in label order) stopped, so overall fold sizes
/// also differ by at most one.
pub fn stratified_split(strata: &[String], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds == 0 {
        return Err(Error::InvalidArgument("fold count must be positive".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in strata.iter().enumerate() {
        groups.entry(label.as_str()).or_default().push(i);
    }
    let mut assignment = alloc::vec![0; strata.len()];
    let mut offset = 0;
    for (label, mut members) in groups {
        if members.len() < folds {
            return Err(Error::StratumTooSmall {
                stratum: label.into(),
                size: members.len(),
                folds,
            });
        }
        members.shuffle(&mut rng::stream(rng::derive_label(seed, &[], label)));
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % folds;
        }
        offset += members.len();
    }
    Ok(assignment)
}

/// Folds (1-based) that train each nuisance model when fold `k` is the
/// estimation fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NuisanceRoles {
    pub outcome: usize,
    pub treatment: usize,
    pub source: usize,
    /// Only with five folds (external targets).
    pub external: Option<usize>,
}

/// Cyclic rotation: outcome on `k+1`, treatment on `k+2`, source on `k+3`
/// and, with five folds, the external model on `k+4` (all mod `K`, 1-based).
pub fn assign_nuisance_roles(folds: usize, k: usize) -> NuisanceRoles {
    let at = |shift: usize| (k - 1 + shift) % folds + 1;
    NuisanceRoles {
        outcome: at(1),
        treatment: at(2),
        source: at(3),
        external: (folds >= 5).then(|| at(4)),
    }
}

/// Point estimates and their covariance for every target in one split or
/// replication, per reported table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub point: [Vec<f64>; TABLES],
    /// `J × J` row-major covariance matrices.
    pub covariance: [Vec<f64>; TABLES],
}

impl ReplicationResult {
    pub fn variance(&self, table: usize) -> Vec<f64> {
        let j = self.point[table].len();
        (0..j).map(|i| self.covariance[table][i * j + i]).collect()
    }

    /// Mean over splits, with covariances summed and divided by `K²`.
    pub fn from_splits(splits: &[ReplicationResult]) -> ReplicationResult {
        let k = splits.len() as f64;
        let combine = |f: &dyn Fn(&ReplicationResult) -> &Vec<f64>, scale: f64| -> Vec<f64> {
            let len = f(&splits[0]).len();
            (0..len)
                .map(|i| splits.iter().map(|s| f(s)[i]).sum::<f64>() * scale)
                .collect()
        };
        ReplicationResult {
            point: core::array::from_fn(|t| combine(&|s| &s.point[t], 1.0 / k)),
            covariance: core::array::from_fn(|t| combine(&|s| &s.covariance[t], 1.0 / (k * k))),
        }
    }
}

/// Median aggregate of one scalar across replications:
/// `(median ψˡ, median(Varˡ + (ψˡ − median ψ)²))`.
pub fn aggregate_replications(points: &[f64], variances: &[f64]) -> (f64, f64) {
    let point = median(points);
    let spread: Vec<f64> = points
        .iter()
        .zip(variances)
        .map(|(p, v)| v + (p - point) * (p - point))
        .collect();
    (point, median(&spread))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub point: [Vec<f64>; TABLES],
    pub variance: [Vec<f64>; TABLES],
    /// Elementwise median of the per-replication correlation matrices.
    pub correlation: [Vec<f64>; TABLES],
}

pub fn aggregate(results: &[ReplicationResult]) -> Aggregate {
    let j = results[0].point[0].len();
    let mut point: [Vec<f64>; TABLES] = Default::default();
    let mut variance: [Vec<f64>; TABLES] = Default::default();
    let mut correlation: [Vec<f64>; TABLES] = Default::default();
    for t in 0..TABLES {
        let variances: Vec<Vec<f64>> = results.iter().map(|r| r.variance(t)).collect();
        for i in 0..j {
            let ps: Vec<f64> = results.iter().map(|r| r.point[t][i]).collect();
            let vs: Vec<f64> = variances.iter().map(|v| v[i]).collect();
            let (p, v) = aggregate_replications(&ps, &vs);
            point[t].push(p);
            variance[t].push(v);
        }
        correlation[t] = (0..j * j)
            .map(|cell| {
                let (a, b) = (cell / j, cell % j);
                if a == b {
                    return 1.0;
                }
                let rs: Vec<f64> = results
                    .iter()
                    .zip(&variances)
                    .map(|(r, v)| {
                        let d = libm::sqrt(v[a] * v[b]);
                        if d > 0.0 {
                            r.covariance[t][cell] / d
                        } else {
                            0.0
                        }
                    })
                    .collect();
                median(&rs)
            })
            .collect();
    }
    Aggregate {
        point,
        variance,
        correlation,
    }
}

/// Evaluate every target on rows whose nuisance predictions are `pred`.
pub fn estimate_targets(
    data: &StackedDataset,
    rows: &[usize],
    pred: &NuisancePredictions,
    targets: &[Target],
    eps: f64,
) -> Result<ReplicationResult> {
    let estimates = targets
        .iter()
        .map(|t| {
            let arm = |a: u8| match t.population {
                Population::Internal(s) => estimate_arm_internal(data, rows, pred, s, a, t.subgroup, eps),
                Population::External => estimate_arm_external(data, rows, pred, a, t.subgroup, eps),
            };
            effect_from_arms(arm(1)?, arm(0)?)
        })
        .collect::<Result<Vec<EffectEstimate>>>()?;
    let scaled: [Vec<Vec<f64>>; TABLES] = [
        estimates
            .iter()
            .map(|e| scale(&e.arm0.if_contributions, e.arm0.denom_count))
            .collect(),
        estimates
            .iter()
            .map(|e| scale(&e.arm1.if_contributions, e.arm1.denom_count))
            .collect(),
        estimates.iter().map(EffectEstimate::scaled_contributions).collect(),
    ];
    let point = [
        estimates.iter().map(|e| e.arm0.point).collect(),
        estimates.iter().map(|e| e.arm1.point).collect(),
        estimates.iter().map(|e| e.point).collect(),
    ];
    let covariance = core::array::from_fn(|t| cross_products(&scaled[t]));
    Ok(ReplicationResult { point, covariance })
}

fn scale(d: &[f64], denom: usize) -> Vec<f64> {
    d.iter().map(|v| v / denom as f64).collect()
}

fn cross_products(columns: &[Vec<f64>]) -> Vec<f64> {
    let j = columns.len();
    let mut out = alloc::vec![0.0; j * j];
    for a in 0..j {
        for b in a..j {
            let v: f64 = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum();
            out[a * j + b] = v;
            out[b * j + a] = v;
        }
    }
    out
}

/// Outcome of a full estimation run before inference.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitOutput {
    pub replications: Vec<ReplicationResult>,
    pub aggregate: Aggregate,
    /// Sorted and de-duplicated fit warnings.
    pub warnings: Vec<String>,
}

fn finish(replications: Vec<ReplicationResult>, warnings: Vec<Vec<String>>) -> CrossFitOutput {
    let mut warnings: Vec<String> = warnings.into_iter().flatten().collect();
    warnings.sort();
    warnings.dedup();
    CrossFitOutput {
        aggregate: aggregate(&replications),
        replications,
        warnings,
    }
}

/// Fit every nuisance on all of `rows` and evaluate on the same rows.
pub fn run_no_crossfit(
    data: &StackedDataset,
    rows: &[usize],
    targets: &[Target],
    spec: &NuisanceSpec,
    external: bool,
    seed: u64,
    eps: f64,
) -> Result<CrossFitOutput> {
    let fits = fit_nuisances(data, TrainingRows::all(rows, external), spec, seed)?;
    let pred = fits.predict(data, rows);
    let result = estimate_targets(data, rows, &pred, targets, eps)?;
    Ok(finish(alloc::vec![result], alloc::vec![fits.warnings()]))
}

const SPLIT_KEY: u64 = 0x5917;
const FIT_KEY: u64 = 0xF17;

/// Fold membership lists (0-based folds) for replication `l`.
pub fn replication_folds(
    rows: &[usize],
    strata: &[String],
    plan: &CrossFitPlan,
    l: usize,
) -> Result<Vec<Vec<usize>>> {
    let assignment = stratified_split(strata, plan.folds, rng::derive(plan.seed, &[SPLIT_KEY, l as u64]))?;
    let mut folds = alloc::vec![Vec::new(); plan.folds];
    for (&r, &f) in rows.iter().zip(&assignment) {
        folds[f].push(r);
    }
    Ok(folds)
}

fn run_split(
    data: &StackedDataset,
    folds: &[Vec<usize>],
    targets: &[Target],
    spec: &NuisanceSpec,
    plan: &CrossFitPlan,
    (l, k): (usize, usize),
    eps: f64,
) -> Result<(ReplicationResult, Vec<String>)> {
    let roles = assign_nuisance_roles(plan.folds, k + 1);
    let fold = |one_based: usize| folds[one_based - 1].as_slice();
    let train = TrainingRows {
        outcome: fold(roles.outcome),
        treatment: fold(roles.treatment),
        source: fold(roles.source),
        external: roles.external.map(fold),
    };
    let fits = fit_nuisances(data, train, spec, rng::derive(plan.seed, &[FIT_KEY, l as u64, k as u64]))?;
    let eval = &folds[k];
    let pred = fits.predict(data, eval);
    Ok((estimate_targets(data, eval, &pred, targets, eps)?, fits.warnings()))
}

/// Repeated stratified cross-fitting over `plan.replications` splits of
/// `rows`; `strata` labels align with `rows`.
pub fn run_crossfit<E: Executor>(
    data: &StackedDataset,
    rows: &[usize],
    strata: &[String],
    targets: &[Target],
    spec: &NuisanceSpec,
    plan: &CrossFitPlan,
    eps: f64,
    executor: &E,
) -> Result<CrossFitOutput> {
    if plan.replications == 0 {
        return Err(Error::InvalidArgument("replications must be at least 1".into()));
    }
    spec.validate()?;
    let external = rows.iter().any(|&r| data.source_of(r).is_none());
    if external && plan.folds < 5 {
        return Err(Error::InvalidArgument("external targets need five folds".into()));
    }
    let folds = (0..plan.replications)
        .map(|l| replication_folds(rows, strata, plan, l))
        .collect::<Result<Vec<_>>>()?;
    let k = plan.folds;
    let results = executor.map(plan.replications * k, |job| {
        let (l, split) = (job / k, job % k);
        run_split(data, &folds[l], targets, spec, plan, (l, split), eps).map_err(|e| e.in_split(l + 1, split + 1))
    });
    let mut replications = Vec::with_capacity(plan.replications);
    let mut warnings = Vec::new();
    let mut results = results.into_iter();
    for _ in 0..plan.replications {
        let mut splits = Vec::with_capacity(k);
        for _ in 0..k {
            let (r, w) = results.next().expect("one result per job")?;
            splits.push(r);
            warnings.push(w);
        }
        replications.push(ReplicationResult::from_splits(&splits));
    }
    Ok(finish(replications, warnings))
}

/// Arithmetic mean of per-split point estimates (exposed for checks).
pub fn split_mean(points: &[f64]) -> f64 {
    mean(points)
}

#[cfg(test)]
mod tests {
    extern crate std;

    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn labels(sizes: &[(&str, usize)]) -> Vec<String> {
        sizes
            .iter()
            .flat_map(|(l, n)| core::iter::repeat(l.to_string()).take(*n))
            .collect()
    }

    fn counts(strata: &[String], folds: &[usize], label: &str, k: usize) -> Vec<usize> {
        let mut c = alloc::vec![0; k];
        for (s, &f) in strata.iter().zip(folds) {
            if s == label {
                c[f] += 1;
            }
        }
        c
    }

    #[test]
    fn exact_divisibility_puts_one_row_per_stratum_in_each_fold() {
        let strata = labels(&[("a", 4), ("b", 4)]);
        let folds = stratified_split(&strata, 4, 11).unwrap();
        assert_eq!(counts(&strata, &folds, "a", 4), [1, 1, 1, 1]);
        assert_eq!(counts(&strata, &folds, "b", 4), [1, 1, 1, 1]);
    }

    #[test]
    fn five_rows_in_four_folds() {
        let strata = labels(&[("a", 5)]);
        let mut c = counts(&strata, &stratified_split(&strata, 4, 3).unwrap(), "a", 4);
        c.sort_unstable();
        assert_eq!(c, [1, 1, 1, 2]);
    }

    #[test]
    fn example_source_sizes() {
        let strata = labels(&[("A", 2312), ("B", 1147), ("C", 592)]);
        let folds = stratified_split(&strata, 4, 5).unwrap();
        assert_eq!(counts(&strata, &folds, "A", 4), [578; 4]);
        let b = counts(&strata, &folds, "B", 4);
        assert!(b.iter().all(|&n| n == 286 || n == 287));
        assert_eq!(b.iter().sum::<usize>(), 1147);
        assert_eq!(counts(&strata, &folds, "C", 4), [148; 4]);
        let mut totals = alloc::vec![0; 4];
        folds.iter().for_each(|&f| totals[f] += 1);
        assert!(totals.iter().max().unwrap() - totals.iter().min().unwrap() <= 1);
    }

    #[test]
    fn small_stratum_is_rejected_with_advice() {
        let strata = labels(&[("a", 8), ("b", 3)]);
        let err = stratified_split(&strata, 4, 1).unwrap_err();
        assert!(matches!(err, Error::StratumTooSmall { size: 3, folds: 4, .. }));
        assert!(err.to_string().contains("disabling cross-fitting"));
    }

    #[test]
    fn split_is_seeded_by_label_not_position() {
        let a = labels(&[("x", 6), ("y", 6)]);
        let mut b = labels(&[("y", 6)]);
        b.extend(labels(&[("x", 6)]));
        let fa = stratified_split(&a, 3, 9).unwrap();
        let fb = stratified_split(&b, 3, 9).unwrap();
        assert_eq!(fa[..6], fb[6..]);
        assert_eq!(fa, stratified_split(&a, 3, 9).unwrap());
    }

    #[test]
    fn role_rotation() {
        let r = assign_nuisance_roles(4, 1);
        assert_eq!((r.outcome, r.treatment, r.source, r.external), (2, 3, 4, None));
        let r = assign_nuisance_roles(4, 3);
        assert_eq!((r.outcome, r.treatment, r.source, r.external), (4, 1, 2, None));
        let r = assign_nuisance_roles(5, 5);
        assert_eq!((r.outcome, r.treatment, r.source, r.external), (1, 2, 3, Some(4)));
    }

    #[test]
    fn step_five_hand_examples() {
        assert_eq!(aggregate_replications(&[1.0, 2.0, 3.0], &[0.1, 0.1, 0.1]), (2.0, 1.1));
        assert_eq!(aggregate_replications(&[4.2], &[0.3]), (4.2, 0.3));
        assert_eq!(aggregate_replications(&[5.0; 4], &[0.4, 0.1, 0.3, 0.2]), (5.0, 0.25));
        assert_eq!(split_mean(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn split_combination_uses_k_squared() {
        let split = |p: f64, v: f64| ReplicationResult {
            point: [alloc::vec![p], alloc::vec![p], alloc::vec![p]],
            covariance: [alloc::vec![v], alloc::vec![v], alloc::vec![v]],
        };
        let r = ReplicationResult::from_splits(&[split(1.0, 0.4), split(2.0, 0.4), split(3.0, 0.4), split(4.0, 0.4)]);
        assert_eq!(r.point[0], [2.5]);
        assert!((r.covariance[0][0] - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn folds_partition_rows_and_balance_strata(
            sizes in proptest::collection::vec(5usize..40, 1..5),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let named: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, &n)| (alloc::format!("s{i}"), n)).collect();
            let strata: Vec<String> = named.iter().flat_map(|(l, n)| core::iter::repeat(l.clone()).take(*n)).collect();
            let folds = stratified_split(&strata, k, seed).unwrap();
            prop_assert_eq!(folds.len(), strata.len());
            for (l, _) in &named {
                let c = counts(&strata, &folds, l, k);
                prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn aggregation_is_permutation_invariant(
            pairs in proptest::collection::vec((-10.0f64..10.0, 0.0f64..2.0), 1..12),
            rotate in 0usize..12,
        ) {
            let (p, v): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut q = pairs.clone();
            let len = q.len();
            q.rotate_left(rotate % len);
            q.reverse();
            let (p2, v2): (Vec<f64>, Vec<f64>) = q.into_iter().unzip();
            let a = aggregate_replications(&p, &v);
            let b = aggregate_replications(&p2, &v2);
            prop_assert_eq!(a, b);
            prop_assert!(a.1 >= 0.0);
        }

        #[test]
        fn equal_points_keep_median_variance(c in -5.0f64..5.0, v in proptest::collection::vec(0.0f64..3.0, 1..9)) {
            let points = alloc::vec![c; v.len()];
            let (p, var) = aggregate_replications(&points, &v);
            prop_assert_eq!(p, c);
            prop_assert_eq!(var, median(&v));
            prop_assert!(var >= v.iter().copied().fold(f64::INFINITY, f64::min));
        }
    }
}
