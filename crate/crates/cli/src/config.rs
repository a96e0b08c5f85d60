//! Run configuration: one JSON document, optionally patched by
//! `--set key=value` overrides and the `CMR_SEED` environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use txmeta_core::data::ColumnRoles;
use txmeta_core::learners::{Candidate, Family, LearnerSpec, Stacking};
use txmeta_core::nuisance::{SourceModel, TreatmentModelType};
use txmeta_core::{AnalysisConfig, AnalysisKind, NuisanceSpec};

use crate::error::CliError;

pub const SEED_ENV: &str = "CMR_SEED";

/// Column roles; covariates default to every column without another role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    #[serde(default = "default_outcome")]
    pub outcome: String,
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default)]
    pub effect_modifier: Option<String>,
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

fn default_outcome() -> String {
    "Y".into()
}
fn default_source() -> String {
    "S".into()
}
fn default_treatment() -> String {
    "A".into()
}

impl Default for Columns {
    fn default() -> Columns {
        Columns {
            outcome: default_outcome(),
            source: default_source(),
            treatment: default_treatment(),
            effect_modifier: None,
            covariates: None,
            categorical: Vec::new(),
        }
    }
}

impl Columns {
    /// Resolve to explicit roles given the header of the multi-source file.
    pub fn roles(&self, header: &[String]) -> ColumnRoles {
        let covariates = match &self.covariates {
            Some(c) => c.clone(),
            None => header
                .iter()
                .filter(|h| {
                    ![&self.outcome, &self.source, &self.treatment].contains(h)
                        && self.effect_modifier.as_ref() != Some(*h)
                })
                .cloned()
                .collect(),
        };
        ColumnRoles {
            outcome: self.outcome.clone(),
            source: self.source.clone(),
            treatment: self.treatment.clone(),
            effect_modifier: self.effect_modifier.clone(),
            covariates,
            categorical: self.categorical.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub use_scb: bool,
    #[serde(default)]
    pub sort: bool,
    #[serde(default = "default_width")]
    pub width: u32,
}

fn yes() -> bool {
    true
}
fn default_width() -> u32 {
    760
}

impl Default for ForestConfig {
    fn default() -> ForestConfig {
        ForestConfig {
            enabled: true,
            use_scb: false,
            sort: false,
            width: default_width(),
        }
    }
}

/// Candidate library used when a model's learners are not configured.
pub fn default_library() -> LearnerSpec {
    LearnerSpec {
        candidates: vec![Candidate::lasso(), Candidate::nnet(2), Candidate::Glm],
        stacking: Stacking::ConvexStack,
        cv_folds: 10,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Multi-source CSV (outcome, source, treatment, covariates).
    pub data: Option<PathBuf>,
    /// External covariate CSV (external analyses).
    #[serde(default)]
    pub external_data: Option<PathBuf>,
    #[serde(default)]
    pub columns: Columns,
    #[serde(default = "default_library")]
    pub outcome_model: LearnerSpec,
    #[serde(default = "gaussian")]
    pub outcome_family: Family,
    #[serde(default = "default_library")]
    pub treatment_model: LearnerSpec,
    #[serde(default)]
    pub treatment_model_type: TreatmentModelType,
    #[serde(default)]
    pub source_model: SourceModel,
    #[serde(default = "default_library")]
    pub external_model: LearnerSpec,
    #[serde(default = "yes")]
    pub cross_fitting: bool,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_draws")]
    pub scb_draws: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub forest: ForestConfig,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn gaussian() -> Family {
    Family::Gaussian
}
fn default_replications() -> usize {
    100
}
fn default_clip() -> f64 {
    0.01
}
fn default_level() -> f64 {
    0.95
}
fn default_draws() -> usize {
    100_000
}
fn default_output() -> PathBuf {
    PathBuf::from("txmeta-out")
}

impl RunConfig {
    pub fn analysis(&self, kind: AnalysisKind) -> AnalysisConfig {
        AnalysisConfig {
            kind,
            nuisance: NuisanceSpec {
                outcome: self.outcome_model.clone(),
                outcome_family: self.outcome_family,
                treatment: self.treatment_model.clone(),
                treatment_type: self.treatment_model_type,
                source: self.source_model,
                external: self.external_model.clone(),
            },
            cross_fitting: self.cross_fitting,
            replications: self.replications,
            seed: self.seed,
            clip: self.clip,
            level: self.level,
            scb_draws: self.scb_draws,
        }
    }

    /// Make relative paths relative to `base`.
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.as_mut() {
            fix(p);
        }
        if let Some(p) = self.external_data.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }
}

/// Read a JSON document (or start from `{}`) and apply overrides.
pub fn load_document(path: Option<&Path>, overrides: &[String]) -> Result<Value, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: invalid JSON: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !doc.is_object() {
        return Err(CliError::Validation("configuration must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    Ok(doc)
}

/// `a.b.c=value`; the value is parsed as JSON when possible, else taken as a
/// string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("--set: empty key segment in {key:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("--set: {key:?} does not address an object field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parse a run configuration. Relative paths are taken relative to the
/// configuration file's directory (or the working directory without one).
pub fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut doc = load_document(path, &[])?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
        doc["seed"] = Value::from(seed);
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut config: RunConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("configuration: {e}")))?;
    let base = path
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    config.resolve(&base);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_patch_nested_fields() {
        let mut doc = serde_json::json!({"columns": {"outcome": "y"}});
        apply_override(&mut doc, "columns.effect_modifier=EM").unwrap();
        apply_override(&mut doc, "replications=3").unwrap();
        apply_override(&mut doc, "forest.use_scb=true").unwrap();
        assert_eq!(doc["columns"]["effect_modifier"], "EM");
        assert_eq!(doc["replications"], 3);
        assert_eq!(doc["forest"]["use_scb"], true);
        assert!(apply_override(&mut doc, "novalue").is_err());
    }

    #[test]
    fn defaults_fill_a_minimal_document() {
        let c: RunConfig = serde_json::from_value(serde_json::json!({"data": "d.csv"})).unwrap();
        assert_eq!(c.replications, 100);
        assert_eq!(c.clip, 0.01);
        assert_eq!(c.outcome_model.candidate_names(), ["lasso", "nnet", "glm"]);
        assert_eq!(c.source_model, SourceModel::MnLasso);
        let err = serde_json::from_value::<RunConfig>(serde_json::json!({"bogus": 1}));
        assert!(err.is_err());
    }

    #[test]
    fn covariates_default_to_remaining_columns() {
        let cols = Columns {
            effect_modifier: Some("EM".into()),
            ..Columns::default()
        };
        let header: Vec<String> = ["X1", "Y", "S", "A", "EM", "X2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(cols.roles(&header).covariates, ["X1", "X2"]);
    }
}
