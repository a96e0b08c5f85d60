//! Synthetic multi-source and external data with known effects.
//!
//! Covariates are standard normal in the pooled internal sample. Source
//! membership follows a softmax in `X` whose intercepts are calibrated so the
//! marginal source shares match the requested sizes; rows are then drawn
//! until every source quota is filled. Treatment is logistic with shared
//! slopes and per-source intercepts. The effect modifier is a binned
//! `X₁ + ξ`. Outcomes are linear in `X` and the modifier, plus `A·τ(X, EM)`
//! and Gaussian noise. External covariates are normal with a mean shift.
//!
//! With every misspecification strength at zero, the linear and logistic
//! working models used by the estimators are correctly specified.
//! A positive strength adds `X₁X₂ + exp(X₁)/2` (times the strength) to the
//! chosen model; for the external sample it thins draws with acceptance
//! probability `logistic(strength · (X₁X₂ + exp(X₁)/2) − 1)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Categorical, Covariate, CovariateTable, EffectModifier, ExternalSample, MultiSourceDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{logistic, normal_cdf, normal_pdf, normal_quantile, softmax_in_place};

/// Strength of the omitted nonlinear term per model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misspecification {
    pub outcome: f64,
    pub source: f64,
    pub treatment: f64,
    pub external: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub source_sizes: Vec<usize>,
    pub source_labels: Vec<String>,
    pub n_external: usize,
    pub covariates: usize,
    /// Effect-modifier levels; 0 omits the modifier.
    pub em_levels: usize,
    /// Standard deviation of the noise added to `X₁` before binning.
    pub em_noise: f64,
    /// Softmax slopes per source (`m × p`).
    pub source_slopes: Vec<Vec<f64>>,
    pub treatment_intercepts: Vec<f64>,
    pub treatment_slopes: Vec<f64>,
    pub outcome_intercept: f64,
    pub outcome_slopes: Vec<f64>,
    /// Main effect of each modifier level on the outcome.
    pub em_outcome: Vec<f64>,
    pub effect_intercept: f64,
    pub effect_slopes: Vec<f64>,
    /// Additive effect of each modifier level on the treatment effect.
    pub em_effect: Vec<f64>,
    pub noise_sd: f64,
    /// Mean of the external covariates.
    pub external_shift: Vec<f64>,
    pub misspecification: Misspecification,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig::example()
    }
}

fn pad(values: &[f64], len: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.resize(len, 0.0);
    v
}

impl SimConfig {
    /// Three sources of 2312, 1147 and 592 rows, 10 083 external rows, nine
    /// continuous covariates and a five-level effect modifier.
    pub fn example() -> SimConfig {
        let p = 9;
        SimConfig {
            source_sizes: alloc::vec![2312, 1147, 592],
            source_labels: ["A", "B", "C"].iter().map(|s| s.to_string()).collect(),
            n_external: 10_083,
            covariates: p,
            em_levels: 5,
            em_noise: 0.5,
            source_slopes: alloc::vec![
                alloc::vec![0.0; p],
                pad(&[0.4, -0.3, 0.2], p),
                pad(&[-0.3, 0.2, 0.0, 0.3], p),
            ],
            treatment_intercepts: alloc::vec![0.0, 0.3, -0.3],
            treatment_slopes: pad(&[0.3, -0.2, 0.1, 0.2], p),
            outcome_intercept: 20.0,
            outcome_slopes: pad(&[1.0, 0.5, -0.5, 0.3, 0.2], p),
            em_outcome: alloc::vec![0.0, 0.5, 1.0, 1.5, 2.0],
            effect_intercept: 6.5,
            effect_slopes: pad(&[0.8, -0.4, 0.3], p),
            em_effect: alloc::vec![-0.8, -0.4, 0.0, 0.4, 0.8],
            noise_sd: 2.0,
            external_shift: pad(&[0.3, -0.2, 0.2], p),
            misspecification: Misspecification::default(),
            seed: 1,
        }
    }

    /// A smaller design with the example's structure: `m` sources of `n`
    /// rows, `n_external` external rows, `p ≥ 2` covariates.
    pub fn small(m: usize, n: usize, n_external: usize, p: usize, em_levels: usize) -> SimConfig {
        let example = SimConfig::example();
        let source_slopes = (0..m)
            .map(|s| {
                if s == 0 {
                    alloc::vec![0.0; p]
                } else {
                    let base = &example.source_slopes[1 + (s - 1) % 2];
                    pad(&base[..p.min(base.len())], p).iter().map(|v| v * (1.0 + 0.25 * ((s - 1) / 2) as f64)).collect()
                }
            })
            .collect();
        let spread = |levels: usize, step: f64| -> Vec<f64> {
            (0..levels).map(|g| step * (g as f64 - (levels as f64 - 1.0) / 2.0)).collect()
        };
        SimConfig {
            source_sizes: alloc::vec![n; m],
            source_labels: (0..m).map(source_label).collect(),
            n_external,
            covariates: p,
            em_levels,
            source_slopes,
            treatment_intercepts: (0..m).map(|s| [0.0, 0.3, -0.3][s % 3]).collect(),
            treatment_slopes: pad(&example.treatment_slopes[..p.min(9)], p),
            outcome_slopes: pad(&example.outcome_slopes[..p.min(9)], p),
            em_outcome: spread(em_levels, 0.5),
            effect_slopes: pad(&example.effect_slopes[..p.min(9)], p),
            em_effect: spread(em_levels, 0.4),
            external_shift: pad(&example.external_shift[..p.min(9)], p),
            ..example
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.source_sizes.len();
        let p = self.covariates;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("simulation config: {what}")));
        if m == 0 || self.source_sizes.contains(&0) {
            return bad("every source needs at least one row");
        }
        if p < 2 {
            return bad("at least two covariates are required");
        }
        if self.source_labels.len() != m {
            return bad("one label per source is required");
        }
        let mut labels = self.source_labels.clone();
        labels.sort();
        labels.dedup();
        if labels.len() != m {
            return bad("source labels must be distinct");
        }
        if self.source_slopes.len() != m || self.source_slopes.iter().any(|r| r.len() != p) {
            return bad("source_slopes must be sources × covariates");
        }
        if self.treatment_intercepts.len() != m {
            return bad("one treatment intercept per source is required");
        }
        for (name, v) in [
            ("treatment_slopes", &self.treatment_slopes),
            ("outcome_slopes", &self.outcome_slopes),
            ("effect_slopes", &self.effect_slopes),
            ("external_shift", &self.external_shift),
        ] {
            if v.len() != p {
                return bad(&format!("{name} needs one entry per covariate"));
            }
        }
        if self.em_outcome.len() != self.em_levels || self.em_effect.len() != self.em_levels {
            return bad("em_outcome and em_effect need one entry per modifier level");
        }
        if self.em_levels == 1 {
            return bad("an effect modifier needs at least two levels");
        }
        if !(self.noise_sd >= 0.0) || !(self.em_noise > 0.0) {
            return bad("noise standard deviations must be positive");
        }
        Ok(())
    }
}

fn source_label(s: usize) -> String {
    let letters = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    if s < letters.len() {
        String::from(letters[s] as char)
    } else {
        format!("S{}", s + 1)
    }
}

fn level_label(g: usize) -> String {
    let letters = b"abcdefghijklmnopqrstuvwxyz";
    if g < letters.len() {
        String::from(letters[g] as char)
    } else {
        format!("g{}", g + 1)
    }
}

/// `X₁X₂ + exp(X₁)/2`.
fn nonlinear(x: &[f64]) -> f64 {
    x[0] * x[1] + 0.5 * libm::exp(x[0])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws and ground truth for one configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    /// Calibrated softmax intercepts.
    source_intercepts: Vec<f64>,
    /// Modifier bin edges on the `X₁ + ξ` scale (interior cut points).
    cuts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: MultiSourceDataset,
    pub external: ExternalSample,
}

const CALIBRATION_DRAWS: usize = 20_000;
const CALIBRATION_SEED: u64 = 0xCA1B;

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Simulator> {
        config.validate()?;
        let scale = libm::sqrt(1.0 + config.em_noise * config.em_noise);
        let cuts = (1..config.em_levels)
            .map(|g| scale * normal_quantile(g as f64 / config.em_levels as f64))
            .collect();
        let mut sim = Simulator {
            source_intercepts: alloc::vec![0.0; config.source_sizes.len()],
            config,
            cuts,
        };
        sim.calibrate();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Fixed-point iteration on the intercepts so that the average softmax
    /// probability of each source, over a fixed normal sample, matches its
    /// share of the requested rows.
    fn calibrate(&mut self) {
        let m = self.config.source_sizes.len();
        if m == 1 {
            return;
        }
        let total: usize = self.config.source_sizes.iter().sum();
        let target: Vec<f64> = self.config.source_sizes.iter().map(|&n| n as f64 / total as f64).collect();
        let mut stream = rng::stream(CALIBRATION_SEED);
        let xs: Vec<Vec<f64>> = (0..CALIBRATION_DRAWS)
            .map(|_| (0..self.config.covariates).map(|_| stream.sample(StandardNormal)).collect())
            .collect();
        let mut probs = alloc::vec![0.0; m];
        for _ in 0..200 {
            let mut avg = alloc::vec![0.0; m];
            for x in &xs {
                self.source_probabilities(x, &mut probs);
                avg.iter_mut().zip(&probs).for_each(|(a, p)| *a += p / xs.len() as f64);
            }
            let mut change: f64 = 0.0;
            for s in 1..m {
                let step = libm::log(target[s] / avg[s]) - libm::log(target[0] / avg[0]);
                self.source_intercepts[s] += step;
                change = change.max(libm::fabs(step));
            }
            if change < 1e-10 {
                break;
            }
        }
    }

    fn source_probabilities(&self, x: &[f64], out: &mut [f64]) {
        let h = self.config.misspecification.source;
        for (s, o) in out.iter_mut().enumerate() {
            // Source 0 is the reference; the omitted term enters the others
            // with alternating sign.
            let extra = if s == 0 || h == 0.0 {
                0.0
            } else {
                let sign = if s % 2 == 1 { 1.0 } else { -1.0 };
                sign * h * (nonlinear(x) - 0.5 * libm::exp(0.5))
            };
            *o = self.source_intercepts[s] + dot(&self.config.source_slopes[s], x) + extra;
        }
        softmax_in_place(out);
    }

    fn propensity(&self, x: &[f64], s: usize) -> f64 {
        let c = &self.config;
        let extra = c.misspecification.treatment * (nonlinear(x) - 0.5 * libm::exp(0.5));
        logistic(c.treatment_intercepts[s] + dot(&c.treatment_slopes, x) + extra)
    }

    fn external_acceptance(&self, x: &[f64]) -> f64 {
        let h = self.config.misspecification.external;
        if h == 0.0 {
            1.0
        } else {
            logistic(h * nonlinear(x) - 1.0)
        }
    }

    fn modifier(&self, x1: f64, noise: f64) -> usize {
        let u = x1 + self.config.em_noise * noise;
        self.cuts.iter().filter(|&&c| u > c).count()
    }

    /// P(EM = g | X₁) for every level.
    fn modifier_probabilities(&self, x1: f64, out: &mut [f64]) {
        let sd = self.config.em_noise;
        let mut prev = 0.0;
        for (g, o) in out.iter_mut().enumerate() {
            let upper = match self.cuts.get(g) {
                Some(&c) => normal_cdf((c - x1) / sd),
                None => 1.0,
            };
            *o = upper - prev;
            prev = upper;
        }
    }

    fn baseline(&self, x: &[f64], g: Option<usize>) -> f64 {
        let c = &self.config;
        c.outcome_intercept
            + dot(&c.outcome_slopes, x)
            + g.map_or(0.0, |g| c.em_outcome[g])
            + c.misspecification.outcome * nonlinear(x)
    }

    fn effect(&self, x: &[f64], g: Option<usize>) -> f64 {
        let c = &self.config;
        c.effect_intercept + dot(&c.effect_slopes, x) + g.map_or(0.0, |g| c.em_effect[g])
    }

    /// Draw one dataset; `replicate` selects an independent stream.
    pub fn generate(&self, replicate: u64) -> Result<SimulatedData> {
        let c = &self.config;
        let p = c.covariates;
        let m = c.source_sizes.len();
        let seed = rng::derive(c.seed, &[replicate]);
        let mut stream = rng::stream(rng::derive(seed, &[1]));
        let total: usize = c.source_sizes.iter().sum();
        let mut filled = alloc::vec![0usize; m];
        let mut columns: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(total); p];
        let (mut s_col, mut a_col, mut y_col, mut em_col) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut probs = alloc::vec![0.0; m];
        let mut x = alloc::vec![0.0; p];
        let budget = 1000 * total.max(1000);
        let mut tries = 0;
        while s_col.len() < total {
            tries += 1;
            if tries > budget {
                return Err(Error::InvalidArgument("simulation: source quotas could not be filled".into()));
            }
            x.iter_mut().for_each(|v| *v = stream.sample(StandardNormal));
            self.source_probabilities(&x, &mut probs);
            let u: f64 = stream.random();
            let mut s = 0;
            let mut acc = probs[0];
            while u > acc && s + 1 < m {
                s += 1;
                acc += probs[s];
            }
            if filled[s] == c.source_sizes[s] {
                continue;
            }
            filled[s] += 1;
            let g = (c.em_levels > 0).then(|| self.modifier(x[0], stream.sample(StandardNormal)));
            let a = u8::from(stream.random::<f64>() < self.propensity(&x, s));
            let noise: f64 = stream.sample(StandardNormal);
            let y = self.baseline(&x, g) + f64::from(a) * self.effect(&x, g) + c.noise_sd * noise;
            columns.iter_mut().zip(&x).for_each(|(col, v)| col.push(*v));
            s_col.push(c.source_labels[s].clone());
            a_col.push(a);
            y_col.push(y);
            em_col.push(g);
        }

        let mut ext_stream = rng::stream(rng::derive(seed, &[2]));
        let mut ext_columns: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(c.n_external); p];
        let mut ext_em = Vec::with_capacity(c.n_external);
        let mut tries = 0;
        while ext_em.len() < c.n_external {
            tries += 1;
            if tries > budget {
                return Err(Error::InvalidArgument("simulation: external sample could not be filled".into()));
            }
            x.iter_mut()
                .zip(&c.external_shift)
                .for_each(|(v, d)| *v = d + ext_stream.sample::<f64, _>(StandardNormal));
            let accept = self.external_acceptance(&x);
            if accept < 1.0 && ext_stream.random::<f64>() >= accept {
                continue;
            }
            let g = (c.em_levels > 0).then(|| self.modifier(x[0], ext_stream.sample(StandardNormal)));
            ext_columns.iter_mut().zip(&x).for_each(|(col, v)| col.push(*v));
            ext_em.push(g);
        }

        let names: Vec<String> = (1..=p).map(|j| format!("X{j}")).collect();
        let levels: Vec<String> = (0..c.em_levels).map(level_label).collect();
        let modifier = |codes: &[Option<usize>]| -> Result<Option<EffectModifier>> {
            if c.em_levels == 0 {
                return Ok(None);
            }
            let labels: Vec<&str> = codes.iter().map(|g| levels[g.unwrap_or(0)].as_str()).collect();
            Ok(Some(EffectModifier {
                name: "EM".into(),
                values: Categorical::with_levels(&levels, &labels, "EM")?,
            }))
        };
        let table = |cols: Vec<Vec<f64>>, n: usize| {
            CovariateTable::new(
                names.iter().zip(cols).map(|(name, v)| Covariate::numeric(name.clone(), v)).collect(),
                n,
            )
        };
        let data = MultiSourceDataset::new(y_col, &s_col, a_col, table(columns, total)?, modifier(&em_col)?)?;
        let external = if c.n_external > 0 {
            ExternalSample::new(table(ext_columns, c.n_external)?, modifier(&ext_em)?)?
        } else {
            // An empty external sample is not representable; keep one row.
            ExternalSample::new(table(alloc::vec![alloc::vec![0.0]; p], 1)?, modifier(&[Some(0)])?)?
        };
        Ok(SimulatedData { data, external })
    }

    /// Treatment effects in every population by Monte Carlo integration of
    /// `τ(X, EM)`, with the modifier integrated analytically given `X₁`.
    /// Internal source laws are reached by weighting standard normal draws
    /// with the source probabilities; the external law by the acceptance
    /// probability.
    pub fn true_effects(&self, oracle_n: usize, oracle_seed: u64) -> TrueEffects {
        let c = &self.config;
        let m = c.source_sizes.len();
        let levels = c.em_levels;
        let p = c.covariates;
        let mut acc_internal = alloc::vec![Moments::new(levels); m];
        let mut acc_external = Moments::new(levels);
        let mut stream = rng::stream(oracle_seed);
        let mut x = alloc::vec![0.0; p];
        let mut probs = alloc::vec![0.0; m];
        let mut pg = alloc::vec![0.0; levels];
        for _ in 0..oracle_n {
            x.iter_mut().for_each(|v| *v = stream.sample(StandardNormal));
            self.source_probabilities(&x, &mut probs);
            self.modifier_probabilities(x[0], &mut pg);
            let tau = self.effect(&x, None);
            for (acc, &w) in acc_internal.iter_mut().zip(&probs) {
                acc.add(w, tau, &pg);
            }
            x.iter_mut().zip(&c.external_shift).for_each(|(v, d)| *v += d);
            self.modifier_probabilities(x[0], &mut pg);
            acc_external.add(self.external_acceptance(&x), self.effect(&x, None), &pg);
        }
        let finish = |m: &Moments| -> (f64, Vec<f64>) {
            let ste: Vec<f64> = (0..levels)
                .map(|g| m.tau_by_level[g] / m.weight_by_level[g] + c.em_effect[g])
                .collect();
            let em_part: f64 = (0..levels).map(|g| m.weight_by_level[g] / m.weight * c.em_effect[g]).sum();
            (m.tau / m.weight + em_part, ste)
        };
        let internal: Vec<(f64, Vec<f64>)> = acc_internal.iter().map(finish).collect();
        let (external_ate, external_ste) = finish(&acc_external);
        TrueEffects {
            internal_ate: internal.iter().map(|v| v.0).collect(),
            internal_ste: internal.into_iter().map(|v| v.1).collect(),
            external_ate,
            external_ste,
        }
    }

    /// Exact external-population effects when the external law is an
    /// unthinned shifted normal: `τ₀ + τ·δ + Σ_g P(g) τ_g` overall and
    /// `τ₀ + τ·E[X | EM = g] + τ_g` within level `g`.
    pub fn closed_form_external(&self) -> Option<(f64, Vec<f64>)> {
        let c = &self.config;
        if c.misspecification.external != 0.0 {
            return None;
        }
        let base = c.effect_intercept + dot(&c.effect_slopes, &c.external_shift);
        if c.em_levels == 0 {
            return Some((base, Vec::new()));
        }
        let d1 = c.external_shift[0];
        let v = 1.0 + c.em_noise * c.em_noise;
        let sd = libm::sqrt(v);
        let edges: Vec<f64> = core::iter::once(f64::NEG_INFINITY)
            .chain(self.cuts.iter().copied())
            .chain(core::iter::once(f64::INFINITY))
            .collect();
        let mut ate = base;
        let mut ste = Vec::with_capacity(c.em_levels);
        for g in 0..c.em_levels {
            let (a, b) = ((edges[g] - d1) / sd, (edges[g + 1] - d1) / sd);
            let mass = normal_cdf(b) - normal_cdf(a);
            let pdf = |z: f64| if z.is_finite() { normal_pdf(z) } else { 0.0 };
            // E[X₁ | U in bin] with U = X₁ + ξ: regression of X₁ on U.
            let mean_u = d1 + sd * (pdf(a) - pdf(b)) / mass;
            let mean_x1 = d1 + (mean_u - d1) / v;
            ate += mass * c.em_effect[g];
            ste.push(base + c.effect_slopes[0] * (mean_x1 - d1) + c.em_effect[g]);
        }
        Some((ate, ste))
    }
}

#[derive(Debug, Clone)]
struct Moments {
    weight: f64,
    tau: f64,
    weight_by_level: Vec<f64>,
    tau_by_level: Vec<f64>,
}

impl Moments {
    fn new(levels: usize) -> Moments {
        Moments {
            weight: 0.0,
            tau: 0.0,
            weight_by_level: alloc::vec![0.0; levels],
            tau_by_level: alloc::vec![0.0; levels],
        }
    }

    fn add(&mut self, w: f64, tau: f64, pg: &[f64]) {
        self.weight += w;
        self.tau += w * tau;
        for (g, &q) in pg.iter().enumerate() {
            self.weight_by_level[g] += w * q;
            self.tau_by_level[g] += w * q * tau;
        }
    }
}

/// Ground-truth treatment effects; subgroup vectors follow level order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub internal_ate: Vec<f64>,
    pub internal_ste: Vec<Vec<f64>>,
    pub external_ate: f64,
    pub external_ste: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_has_the_published_shape() {
        let sim = Simulator::new(SimConfig::example()).unwrap();
        let d = sim.generate(0).unwrap();
        let mut counts = alloc::vec![0; 3];
        d.data.source().iter().for_each(|&s| counts[s as usize] += 1);
        assert_eq!(counts, [2312, 1147, 592]);
        assert_eq!(d.data.source_labels(), ["A", "B", "C"]);
        assert_eq!(d.external.n_rows(), 10_083);
        assert_eq!(d.data.covariates().columns().len(), 9);
        assert_eq!(d.data.effect_modifier().unwrap().values.levels().len(), 5);
    }

    #[test]
    fn same_seed_same_data() {
        let sim = Simulator::new(SimConfig::small(2, 100, 50, 3, 2)).unwrap();
        let a = sim.generate(3).unwrap();
        let b = sim.generate(3).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.external, b.external);
        assert_ne!(a.data, sim.generate(4).unwrap().data);
    }

    #[test]
    fn constant_effect_with_null_coefficients() {
        let mut c = SimConfig::small(1, 100_000, 1, 2, 0);
        c.source_slopes = alloc::vec![alloc::vec![0.0; 2]];
        c.treatment_slopes = alloc::vec![0.0; 2];
        c.outcome_slopes = alloc::vec![0.0; 2];
        c.effect_slopes = alloc::vec![0.0; 2];
        c.effect_intercept = 3.0;
        c.noise_sd = 1.0;
        let sim = Simulator::new(c).unwrap();
        let d = sim.generate(0).unwrap();
        let (mut sum, mut cnt) = ([0.0; 2], [0.0; 2]);
        for (y, &a) in d.data.outcome().iter().zip(d.data.treatment()) {
            sum[a as usize] += y;
            cnt[a as usize] += 1.0;
        }
        assert!((sum[1] / cnt[1] - sum[0] / cnt[0] - 3.0).abs() < 0.05);
        let truth = sim.true_effects(1000, 1);
        assert_eq!(truth.internal_ate, [3.0]);
        assert_eq!(truth.external_ate, 3.0);
    }

    #[test]
    fn linear_effect_under_shift() {
        let mut c = SimConfig::small(2, 10, 10, 2, 0);
        c.effect_intercept = 2.0;
        c.effect_slopes = alloc::vec![1.0, 0.0];
        c.external_shift = alloc::vec![0.5, 0.0];
        let sim = Simulator::new(c).unwrap();
        assert!((sim.closed_form_external().unwrap().0 - 2.5).abs() < 1e-15);
        let truth = sim.true_effects(200_000, 2);
        assert!((truth.external_ate - 2.5).abs() < 0.01);
    }

    #[test]
    fn monte_carlo_matches_closed_form_subgroups() {
        let sim = Simulator::new(SimConfig::small(2, 10, 10, 3, 4)).unwrap();
        let (ate, ste) = sim.closed_form_external().unwrap();
        let truth = sim.true_effects(400_000, 5);
        assert!((truth.external_ate - ate).abs() < 0.01);
        for (a, b) in truth.external_ste.iter().zip(&ste) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_is_stable_across_seeds() {
        let mut c = SimConfig::small(3, 10, 10, 3, 3);
        c.misspecification.source = 0.5;
        c.misspecification.external = 1.0;
        let sim = Simulator::new(c).unwrap();
        let a = sim.true_effects(1_000_000, 1);
        let b = sim.true_effects(1_000_000, 2);
        for (x, y) in a.internal_ate.iter().zip(&b.internal_ate) {
            assert!((x - y).abs() < 5e-3);
        }
        assert!((a.external_ate - b.external_ate).abs() < 5e-3);
    }

    #[test]
    fn external_shift_moves_covariate_means() {
        let mut c = SimConfig::small(1, 10, 20_000, 2, 0);
        c.external_shift = alloc::vec![0.7, -0.4];
        let sim = Simulator::new(c).unwrap();
        let d = sim.generate(0).unwrap();
        for (j, shift) in [0.7, -0.4].iter().enumerate() {
            let crate::data::CovariateValues::Numeric(v) = &d.external.covariates().columns()[j].values else {
                panic!()
            };
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            assert!((mean - shift).abs() < 4.0 / libm::sqrt(v.len() as f64));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SimConfig::example();
        c.treatment_slopes.pop();
        assert!(Simulator::new(c).is_err());
        let mut c = SimConfig::example();
        c.source_sizes[1] = 0;
        assert!(Simulator::new(c).is_err());
    }
}
