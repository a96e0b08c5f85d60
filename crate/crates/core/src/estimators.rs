//! One-step influence-function estimators of arm-specific potential-outcome
//! means in internal sources and in the external population.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::StackedDataset;
use crate::error::{Error, Result};
use crate::nuisance::{marginal_propensity, NuisancePredictions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Population {
    /// Internal source by index.
    Internal(usize),
    External,
}

/// Population plus optional effect-modifier level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Target {
    pub population: Population,
    pub subgroup: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmEstimate {
    pub target: Target,
    pub arm: u8,
    pub point: f64,
    /// Per evaluation row; zero outside the target and augmentation sets.
    pub if_contributions: Vec<f64>,
    /// Number of evaluation rows in the target population cell.
    pub denom_count: usize,
}

impl ArmEstimate {
    pub fn se(&self) -> f64 {
        variance_from_if(&self.if_contributions, self.denom_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub arm1: ArmEstimate,
    pub arm0: ArmEstimate,
    pub point: f64,
    pub se: f64,
}

impl EffectEstimate {
    /// Contribution-wise difference scaled to the arm denominators.
    pub fn scaled_contributions(&self) -> Vec<f64> {
        let d = self.arm1.denom_count as f64;
        self.arm1
            .if_contributions
            .iter()
            .zip(&self.arm0.if_contributions)
            .map(|(a, b)| (a - b) / d)
            .collect()
    }
}

#[inline]
fn clip(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

fn in_subgroup(data: &StackedDataset, row: usize, subgroup: Option<u32>) -> bool {
    subgroup.is_none_or(|g| data.em_code(row) == Some(g))
}

fn check_alignment(rows: &[usize], pred: &NuisancePredictions) -> Result<()> {
    if pred.outcome[0].len() != rows.len() || pred.treatment.len() != rows.len() {
        return Err(Error::InvalidArgument("predictions not aligned with evaluation rows".into()));
    }
    Ok(())
}

fn finish(
    target: Target,
    arm: u8,
    membership: &[bool],
    plug_in: &[f64],
    augmentation: &[f64],
    label: impl FnOnce() -> alloc::string::String,
) -> Result<ArmEstimate> {
    let denom = membership.iter().filter(|&&m| m).count();
    if denom == 0 {
        return Err(Error::EmptyTargetCell(label()));
    }
    let total: f64 = membership
        .iter()
        .zip(plug_in)
        .filter(|(m, _)| **m)
        .map(|(_, g)| g)
        .sum::<f64>()
        + augmentation.iter().sum::<f64>();
    let point = total / denom as f64;
    if !point.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let if_contributions = membership
        .iter()
        .zip(plug_in)
        .zip(augmentation)
        .map(|((&m, &g), &aug)| if m { g - point + aug } else { aug })
        .collect();
    Ok(ArmEstimate {
        target,
        arm,
        point,
        if_contributions,
        denom_count: denom,
    })
}

/// Arm mean in internal source `s`, optionally within an effect-modifier
/// level.
///
/// `(Σ Mᵢ ĝₐ(Xᵢ) + Σ I(X̃ᵢ = x̃) I(Aᵢ = a) q̂ₛ(Xᵢ)/êₐ(Xᵢ) (Yᵢ − ĝₐ(Xᵢ))) / Σ Mᵢ`
/// with `Mᵢ = I(X̃ᵢ = x̃, Sᵢ = s)` and `êₐ` the source-marginalized
/// propensity. Probabilities are clipped to `[eps, 1 − eps]`.
pub fn estimate_arm_internal(
    data: &StackedDataset,
    rows: &[usize],
    pred: &NuisancePredictions,
    s: usize,
    a: u8,
    subgroup: Option<u32>,
    eps: f64,
) -> Result<ArmEstimate> {
    check_alignment(rows, pred)?;
    let g = &pred.outcome[usize::from(a)];
    let mut membership = Vec::with_capacity(rows.len());
    let mut augmentation = Vec::with_capacity(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        let cell = in_subgroup(data, r, subgroup);
        membership.push(cell && data.source_of(r) == Some(s));
        let aug = match (cell, data.treatment(r), data.outcome(r)) {
            (true, Some(t), Some(y)) if t == a => {
                // A single source has probability one by construction.
                let q = if pred.source[i].len() == 1 { 1.0 } else { clip(pred.source[i][s], eps) };
                let e = clip(marginal_propensity(&pred.treatment[i], &pred.source[i], a), eps);
                q / e * (y - g[i])
            }
            _ => 0.0,
        };
        augmentation.push(aug);
    }
    let target = Target {
        population: Population::Internal(s),
        subgroup,
    };
    finish(target, a, &membership, g, &augmentation, || {
        alloc::format!("source {} subgroup {:?}", data.source_labels()[s], subgroup_label(data, subgroup))
    })
}

fn subgroup_label(data: &StackedDataset, subgroup: Option<u32>) -> Option<alloc::string::String> {
    subgroup.map(|g| data.em_levels()[g as usize].clone())
}

/// Arm mean in the external population.
///
/// `(Σ I(Sᵢ = 0, X̃ᵢ = x̃) ĝₐ(Xᵢ) + Σ I(Sᵢ ∈ 𝒮, Aᵢ = a, X̃ᵢ = x̃) ·
/// p̂₀/(1 − p̂₀) · (Yᵢ − ĝₐ(Xᵢ))/êₐ(Xᵢ)) / Σ I(Sᵢ = 0, X̃ᵢ = x̃)`
/// with `p̂₀ = P̂(S = 0 | X)` and `êₐ` marginalized over internal sources.
pub fn estimate_arm_external(
    data: &StackedDataset,
    rows: &[usize],
    pred: &NuisancePredictions,
    a: u8,
    subgroup: Option<u32>,
    eps: f64,
) -> Result<ArmEstimate> {
    check_alignment(rows, pred)?;
    let p0 = pred
        .external
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("external model predictions required".into()))?;
    let g = &pred.outcome[usize::from(a)];
    let mut membership = Vec::with_capacity(rows.len());
    let mut augmentation = Vec::with_capacity(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        let cell = in_subgroup(data, r, subgroup);
        let internal = data.source_of(r).is_some();
        membership.push(cell && !internal);
        let aug = match (cell && internal, data.treatment(r), data.outcome(r)) {
            (true, Some(t), Some(y)) if t == a => {
                let p = clip(p0[i], eps);
                let e = clip(marginal_propensity(&pred.treatment[i], &pred.source[i], a), eps);
                p / (1.0 - p) / e * (y - g[i])
            }
            _ => 0.0,
        };
        augmentation.push(aug);
    }
    let target = Target {
        population: Population::External,
        subgroup,
    };
    finish(target, a, &membership, g, &augmentation, || {
        alloc::format!("external subgroup {:?}", subgroup_label(data, subgroup))
    })
}

/// Difference of arm means with the standard error of the
/// contribution-wise difference.
pub fn effect_from_arms(arm1: ArmEstimate, arm0: ArmEstimate) -> Result<EffectEstimate> {
    if arm1.target != arm0.target
        || arm1.denom_count != arm0.denom_count
        || arm1.if_contributions.len() != arm0.if_contributions.len()
    {
        return Err(Error::TargetMismatch);
    }
    let diff: Vec<f64> = arm1
        .if_contributions
        .iter()
        .zip(&arm0.if_contributions)
        .map(|(a, b)| a - b)
        .collect();
    let se = variance_from_if(&diff, arm1.denom_count);
    Ok(EffectEstimate {
        point: arm1.point - arm0.point,
        se,
        arm1,
        arm0,
    })
}

/// `sqrt(Σ Dᵢ²) / denom_count`.
pub fn variance_from_if(contributions: &[f64], denom_count: usize) -> f64 {
    libm::sqrt(contributions.iter().map(|d| d * d).sum::<f64>()) / denom_count.max(1) as f64
}
