//! Canonical in-memory datasets.
//!
//! A [`MultiSourceDataset`] holds outcome `Y`, source `S`, treatment `A`,
//! covariates `X` and an optional categorical effect modifier for the
//! pooled internal sources. An [`ExternalSample`] holds covariates (and the
//! effect modifier) for an external population. Estimation always runs on a
//! [`StackedDataset`], which is either the internal rows alone or internal
//! rows followed by external rows tagged with source code 0.

mod design;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use design::{encode_design, ColumnInfo, ColumnKind, DesignMatrix, DesignOptions, Encoder};

/// A column as it arrives from a CSV reader: header name plus raw cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub cells: Vec<String>,
}

impl RawColumn {
    pub fn new(name: impl Into<String>, cells: Vec<String>) -> RawColumn {
        RawColumn {
            name: name.into(),
            cells,
        }
    }
}

/// Which raw columns play which role.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub outcome: String,
    pub source: String,
    pub treatment: String,
    #[serde(default)]
    pub effect_modifier: Option<String>,
    /// Covariate columns. Their order in the dataset follows the input file.
    pub covariates: Vec<String>,
    /// Covariates to treat as categorical even when every cell parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    /// Numeric column whose values are all 0 or 1.
    Binary,
    Categorical,
}

/// Level dictionary plus per-row level codes. Levels are sorted, so code 0
/// is the lexicographically smallest level (the reference level).
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    levels: Vec<String>,
    codes: Vec<u32>,
}

impl Categorical {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Categorical {
        let levels: Vec<String> = labels
            .iter()
            .map(|l| l.as_ref())
            .collect::<BTreeSet<&str>>()
            .into_iter()
            .map(ToString::to_string)
            .collect();
        let codes = labels
            .iter()
            .map(|l| levels.binary_search_by(|x| x.as_str().cmp(l.as_ref())).unwrap() as u32)
            .collect();
        Categorical { levels, codes }
    }

    /// Encode labels against an existing dictionary; unseen labels are an error.
    pub fn with_levels<S: AsRef<str>>(
        levels: &[String],
        labels: &[S],
        column: &str,
    ) -> Result<Categorical> {
        let codes = labels
            .iter()
            .map(|l| {
                levels
                    .iter()
                    .position(|x| x == l.as_ref())
                    .map(|c| c as u32)
                    .ok_or_else(|| Error::UnseenLevel {
                        column: column.to_string(),
                        level: l.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<u32>>>()?;
        Ok(Categorical {
            levels: levels.to_vec(),
            codes,
        })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.codes[row] as usize]
    }

    fn concat(&self, other: &Categorical) -> Categorical {
        let mut codes = self.codes.clone();
        codes.extend_from_slice(&other.codes);
        Categorical {
            levels: self.levels.clone(),
            codes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Numeric(Vec<f64>),
    Categorical(Categorical),
}

impl CovariateValues {
    fn len(&self) -> usize {
        match self {
            CovariateValues::Numeric(v) => v.len(),
            CovariateValues::Categorical(c) => c.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
    pub values: CovariateValues,
}

impl Covariate {
    /// Numeric covariate; the kind is `Binary` when every value is 0 or 1.
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Covariate {
        let kind = if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            CovariateKind::Binary
        } else {
            CovariateKind::Continuous
        };
        Covariate {
            name: name.into(),
            kind,
            values: CovariateValues::Numeric(values),
        }
    }

    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Covariate {
        Covariate {
            name: name.into(),
            kind: CovariateKind::Categorical,
            values: CovariateValues::Categorical(Categorical::from_labels(labels)),
        }
    }
}

/// Covariate columns sharing one row count.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    columns: Vec<Covariate>,
    n_rows: usize,
}

impl CovariateTable {
    pub fn new(columns: Vec<Covariate>, n_rows: usize) -> Result<CovariateTable> {
        for c in &columns {
            if c.values.len() != n_rows {
                return Err(Error::LengthMismatch {
                    column: c.name.clone(),
                    expected: n_rows,
                    found: c.values.len(),
                });
            }
        }
        Ok(CovariateTable { columns, n_rows })
    }

    pub fn columns(&self) -> &[Covariate] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    fn concat(&self, other: &CovariateTable) -> CovariateTable {
        let columns = self
            .columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| {
                let values = match (&a.values, &b.values) {
                    (CovariateValues::Numeric(x), CovariateValues::Numeric(y)) => {
                        let mut v = x.clone();
                        v.extend_from_slice(y);
                        CovariateValues::Numeric(v)
                    }
                    (CovariateValues::Categorical(x), CovariateValues::Categorical(y)) => {
                        CovariateValues::Categorical(x.concat(y))
                    }
                    _ => unreachable!("schemas checked before concatenation"),
                };
                Covariate {
                    name: a.name.clone(),
                    kind: a.kind,
                    values,
                }
            })
            .collect();
        CovariateTable {
            columns,
            n_rows: self.n_rows + other.n_rows,
        }
    }
}

/// Named categorical effect modifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectModifier {
    pub name: String,
    pub values: Categorical,
}

/// Validated pooled data from the internal sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceDataset {
    outcome: Vec<f64>,
    source: Vec<u32>,
    source_labels: Vec<String>,
    treatment: Vec<u8>,
    covariates: CovariateTable,
    effect_modifier: Option<EffectModifier>,
}

/// Sort source labels numerically when they are all integers, otherwise
/// lexicographically.
fn canonical_source_order(labels: &[String]) -> Vec<String> {
    let unique: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let mut out: Vec<String> = unique.into_iter().map(ToString::to_string).collect();
    if out.iter().all(|l| l.parse::<i64>().is_ok()) {
        out.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    out
}

impl MultiSourceDataset {
    pub fn new(
        outcome: Vec<f64>,
        source: &[String],
        treatment: Vec<u8>,
        covariates: CovariateTable,
        effect_modifier: Option<EffectModifier>,
    ) -> Result<MultiSourceDataset> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        let check = |name: &str, len: usize| {
            if len != n {
                Err(Error::LengthMismatch {
                    column: name.to_string(),
                    expected: n,
                    found: len,
                })
            } else {
                Ok(())
            }
        };
        check("S", source.len())?;
        check("A", treatment.len())?;
        check("X", covariates.n_rows())?;
        if let Some(em) = &effect_modifier {
            check(&em.name, em.values.len())?;
            if covariates.columns().iter().any(|c| c.name == em.name) {
                return Err(Error::EffectModifierInCovariates(em.name.clone()));
            }
        }
        if let Some((row, &a)) = treatment.iter().enumerate().find(|(_, &a)| a > 1) {
            return Err(Error::TreatmentNotBinary {
                row: row + 1,
                value: a.to_string(),
            });
        }
        if let Some(row) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::MissingValue {
                column: "Y".into(),
                row: row + 1,
            });
        }
        let source_labels = canonical_source_order(source);
        let source = source
            .iter()
            .map(|l| source_labels.iter().position(|x| x == l).unwrap() as u32)
            .collect();
        Ok(MultiSourceDataset {
            outcome,
            source,
            source_labels,
            treatment,
            covariates,
            effect_modifier,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_labels.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    /// Canonical source index of each row (into [`Self::source_labels`]).
    pub fn source(&self) -> &[u32] {
        &self.source
    }

    pub fn source_labels(&self) -> &[String] {
        &self.source_labels
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn covariates(&self) -> &CovariateTable {
        &self.covariates
    }

    pub fn effect_modifier(&self) -> Option<&EffectModifier> {
        self.effect_modifier.as_ref()
    }

    /// Drop the effect modifier (ATE analyses do not use it).
    pub fn without_effect_modifier(mut self) -> MultiSourceDataset {
        self.effect_modifier = None;
        self
    }
}

/// Covariates (and effect modifier) sampled from an external population.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSample {
    covariates: CovariateTable,
    effect_modifier: Option<EffectModifier>,
}

impl ExternalSample {
    pub fn new(
        covariates: CovariateTable,
        effect_modifier: Option<EffectModifier>,
    ) -> Result<ExternalSample> {
        if covariates.n_rows() == 0 {
            return Err(Error::Empty);
        }
        if let Some(em) = &effect_modifier {
            if em.values.len() != covariates.n_rows() {
                return Err(Error::LengthMismatch {
                    column: em.name.clone(),
                    expected: covariates.n_rows(),
                    found: em.values.len(),
                });
            }
        }
        Ok(ExternalSample {
            covariates,
            effect_modifier,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.covariates.n_rows()
    }

    pub fn covariates(&self) -> &CovariateTable {
        &self.covariates
    }

    pub fn effect_modifier(&self) -> Option<&EffectModifier> {
        self.effect_modifier.as_ref()
    }

    pub fn without_effect_modifier(mut self) -> ExternalSample {
        self.effect_modifier = None;
        self
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null" | "NULL")
}

fn find<'a>(columns: &'a [RawColumn], name: &str) -> Result<&'a RawColumn> {
    columns
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

fn parse_numeric(col: &RawColumn) -> Result<Vec<f64>> {
    col.cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            if is_missing(cell) {
                return Err(Error::MissingValue {
                    column: col.name.clone(),
                    row: i + 1,
                });
            }
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::InvalidNumber {
                    column: col.name.clone(),
                    row: i + 1,
                    value: cell.clone(),
                }),
            }
        })
        .collect()
}

fn parse_labels(col: &RawColumn) -> Result<Vec<String>> {
    col.cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            if is_missing(cell) {
                Err(Error::MissingValue {
                    column: col.name.clone(),
                    row: i + 1,
                })
            } else {
                Ok(cell.trim().to_string())
            }
        })
        .collect()
}

/// Covariate names in input-file order.
fn covariate_order<'a>(columns: &'a [RawColumn], roles: &ColumnRoles) -> Result<Vec<&'a RawColumn>> {
    for name in &roles.covariates {
        find(columns, name)?;
    }
    Ok(columns
        .iter()
        .filter(|c| roles.covariates.iter().any(|n| *n == c.name))
        .collect())
}

/// Parse and validate role-tagged raw columns into a dataset.
pub fn validate_dataset(columns: &[RawColumn], roles: &ColumnRoles) -> Result<MultiSourceDataset> {
    let mut seen = BTreeSet::new();
    let mut all_roles: Vec<&str> = alloc::vec![&roles.outcome, &roles.source, &roles.treatment];
    all_roles.extend(roles.covariates.iter().map(String::as_str));
    if let Some(em) = &roles.effect_modifier {
        if roles.covariates.iter().any(|c| c == em) {
            return Err(Error::EffectModifierInCovariates(em.clone()));
        }
        all_roles.push(em);
    }
    for r in &all_roles {
        if !seen.insert(*r) {
            return Err(Error::DuplicateRole(r.to_string()));
        }
    }

    let y_col = find(columns, &roles.outcome)?;
    let s_col = find(columns, &roles.source)?;
    let a_col = find(columns, &roles.treatment)?;
    let n = y_col.cells.len();
    for c in columns {
        if all_roles.contains(&c.name.as_str()) && c.cells.len() != n {
            return Err(Error::LengthMismatch {
                column: c.name.clone(),
                expected: n,
                found: c.cells.len(),
            });
        }
    }

    let y = parse_numeric(y_col)?;
    let s = parse_labels(s_col)?;
    let a = parse_numeric(a_col)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(Error::TreatmentNotBinary {
                    row: i + 1,
                    value: a_col.cells[i].clone(),
                })
            }
        })
        .collect::<Result<Vec<u8>>>()?;

    let mut covs = Vec::new();
    for col in covariate_order(columns, roles)? {
        let forced = roles.categorical.iter().any(|c| *c == col.name);
        let numeric = if forced { None } else { parse_numeric(col).ok() };
        covs.push(match numeric {
            Some(v) => Covariate::numeric(col.name.clone(), v),
            None => Covariate::categorical(col.name.clone(), &parse_labels(col)?),
        });
    }
    let covariates = CovariateTable::new(covs, n)?;
    let effect_modifier = match &roles.effect_modifier {
        Some(name) => {
            let col = find(columns, name)?;
            Some(EffectModifier {
                name: name.clone(),
                values: Categorical::from_labels(&parse_labels(col)?),
            })
        }
        None => None,
    };
    MultiSourceDataset::new(y, &s, a, covariates, effect_modifier)
}

/// Parse external covariates against the schema (names, order, types and
/// level dictionaries) of `reference`.
pub fn validate_external(
    columns: &[RawColumn],
    roles: &ColumnRoles,
    reference: &MultiSourceDataset,
) -> Result<ExternalSample> {
    let ordered = covariate_order(columns, roles)?;
    let expected = reference.covariates().names();
    let found: Vec<&str> = ordered.iter().map(|c| c.name.as_str()).collect();
    if found != expected {
        return Err(Error::SchemaMismatch(format!(
            "external covariate columns {found:?} must match {expected:?} in the same order"
        )));
    }
    let n0 = ordered.first().map(|c| c.cells.len()).unwrap_or(0);
    let mut covs = Vec::new();
    for (col, template) in ordered.iter().zip(reference.covariates().columns()) {
        if col.cells.len() != n0 {
            return Err(Error::LengthMismatch {
                column: col.name.clone(),
                expected: n0,
                found: col.cells.len(),
            });
        }
        let values = match &template.values {
            CovariateValues::Numeric(_) => CovariateValues::Numeric(parse_numeric(col)?),
            CovariateValues::Categorical(c) => CovariateValues::Categorical(Categorical::with_levels(
                c.levels(),
                &parse_labels(col)?,
                &col.name,
            )?),
        };
        covs.push(Covariate {
            name: col.name.clone(),
            kind: template.kind,
            values,
        });
    }
    let covariates = CovariateTable::new(covs, n0)?;
    let effect_modifier = match (&roles.effect_modifier, reference.effect_modifier()) {
        (Some(name), Some(em)) => {
            let col = find(columns, name)?;
            if col.cells.len() != n0 {
                return Err(Error::LengthMismatch {
                    column: name.clone(),
                    expected: n0,
                    found: col.cells.len(),
                });
            }
            Some(EffectModifier {
                name: name.clone(),
                values: Categorical::with_levels(em.values.levels(), &parse_labels(col)?, name)?,
            })
        }
        _ => None,
    };
    ExternalSample::new(covariates, effect_modifier)
}

/// Internal rows (and optionally external rows) in one frame.
///
/// Source codes: 0 marks an external row, `s + 1` marks internal source `s`.
/// Outcome and treatment are `None` on external rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDataset {
    covariates: CovariateTable,
    effect_modifier: Option<EffectModifier>,
    source: Vec<u32>,
    outcome: Vec<Option<f64>>,
    treatment: Vec<Option<u8>>,
    source_labels: Vec<String>,
    n_internal: usize,
}

impl StackedDataset {
    /// The internal rows alone.
    pub fn internal(data: &MultiSourceDataset) -> StackedDataset {
        StackedDataset {
            covariates: data.covariates.clone(),
            effect_modifier: data.effect_modifier.clone(),
            source: data.source.iter().map(|s| s + 1).collect(),
            outcome: data.outcome.iter().copied().map(Some).collect(),
            treatment: data.treatment.iter().copied().map(Some).collect(),
            source_labels: data.source_labels.clone(),
            n_internal: data.n_rows(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.source.len()
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    pub fn n_external(&self) -> usize {
        self.source.len() - self.n_internal
    }

    pub fn n_sources(&self) -> usize {
        self.source_labels.len()
    }

    pub fn source_labels(&self) -> &[String] {
        &self.source_labels
    }

    /// Raw source codes (0 = external).
    pub fn source_codes(&self) -> &[u32] {
        &self.source
    }

    /// Internal source index of a row, `None` for external rows.
    #[inline]
    pub fn source_of(&self, row: usize) -> Option<usize> {
        match self.source[row] {
            0 => None,
            s => Some(s as usize - 1),
        }
    }

    #[inline]
    pub fn outcome(&self, row: usize) -> Option<f64> {
        self.outcome[row]
    }

    #[inline]
    pub fn treatment(&self, row: usize) -> Option<u8> {
        self.treatment[row]
    }

    pub fn covariates(&self) -> &CovariateTable {
        &self.covariates
    }

    pub fn effect_modifier(&self) -> Option<&EffectModifier> {
        self.effect_modifier.as_ref()
    }

    #[inline]
    pub fn em_code(&self, row: usize) -> Option<u32> {
        self.effect_modifier.as_ref().map(|e| e.values.codes[row])
    }

    pub fn em_levels(&self) -> &[String] {
        self.effect_modifier
            .as_ref()
            .map(|e| e.values.levels())
            .unwrap_or(&[])
    }

    pub fn internal_rows(&self) -> Vec<usize> {
        (0..self.n_internal).collect()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).collect()
    }
}

/// Append external rows to the internal data under source code 0.
pub fn stack_with_external(
    data: &MultiSourceDataset,
    external: &ExternalSample,
) -> Result<StackedDataset> {
    let a = data.covariates();
    let b = external.covariates();
    if a.names() != b.names() {
        return Err(Error::SchemaMismatch(format!(
            "external covariates {:?} do not match {:?}",
            b.names(),
            a.names()
        )));
    }
    for (x, y) in a.columns().iter().zip(b.columns()) {
        let same = match (&x.values, &y.values) {
            (CovariateValues::Numeric(_), CovariateValues::Numeric(_)) => true,
            (CovariateValues::Categorical(p), CovariateValues::Categorical(q)) => {
                p.levels() == q.levels()
            }
            _ => false,
        };
        if !same {
            return Err(Error::SchemaMismatch(format!(
                "column {:?} differs in type or level dictionary",
                x.name
            )));
        }
    }
    let effect_modifier = match (data.effect_modifier(), external.effect_modifier()) {
        (None, None) => None,
        (Some(p), Some(q)) => {
            if p.name != q.name || p.values.levels() != q.values.levels() {
                return Err(Error::SchemaMismatch(format!(
                    "effect modifier {:?} differs between internal and external data",
                    p.name
                )));
            }
            Some(EffectModifier {
                name: p.name.clone(),
                values: p.values.concat(&q.values),
            })
        }
        (Some(p), None) => return Err(Error::MissingRole(format!("{} (external)", p.name))),
        (None, Some(q)) => return Err(Error::MissingRole(format!("{} (internal)", q.name))),
    };
    let n0 = external.n_rows();
    let mut source: Vec<u32> = data.source.iter().map(|s| s + 1).collect();
    source.extend(core::iter::repeat(0).take(n0));
    let mut outcome: Vec<Option<f64>> = data.outcome.iter().copied().map(Some).collect();
    outcome.extend(core::iter::repeat(None).take(n0));
    let mut treatment: Vec<Option<u8>> = data.treatment.iter().copied().map(Some).collect();
    treatment.extend(core::iter::repeat(None).take(n0));
    Ok(StackedDataset {
        covariates: a.concat(b),
        effect_modifier,
        source,
        outcome,
        treatment,
        source_labels: data.source_labels.clone(),
        n_internal: data.n_rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn col(name: &str, cells: &[&str]) -> RawColumn {
        RawColumn::new(name, cells.iter().map(|c| c.to_string()).collect())
    }

    fn roles(covs: &[&str], em: Option<&str>) -> ColumnRoles {
        ColumnRoles {
            outcome: "Y".into(),
            source: "S".into(),
            treatment: "A".into(),
            effect_modifier: em.map(Into::into),
            covariates: covs.iter().map(|c| c.to_string()).collect(),
            categorical: vec![],
        }
    }

    #[test]
    fn minimal_valid_dataset() {
        let cols = [
            col("Y", &["1.0", "2.0"]),
            col("S", &["A", "A"]),
            col("A", &["0", "1"]),
            col("X", &["0.5", "-1"]),
        ];
        let d = validate_dataset(&cols, &roles(&["X"], None)).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.n_sources(), 1);
        assert_eq!(d.outcome(), &[1.0, 2.0]);
    }

    #[test]
    fn treatment_must_be_binary() {
        let cols = [
            col("Y", &["1", "2"]),
            col("S", &["A", "A"]),
            col("A", &["0", "2"]),
            col("X", &["0", "1"]),
        ];
        let err = validate_dataset(&cols, &roles(&["X"], None)).unwrap_err();
        assert!(matches!(err, Error::TreatmentNotBinary { row: 2, .. }));
        assert!(alloc::format!("{err}").contains("treatment not coded 0/1"));
    }

    #[test]
    fn length_mismatch() {
        let cols = [
            col("Y", &["1", "2", "3"]),
            col("S", &["A", "A"]),
            col("A", &["0", "1", "1"]),
            col("X", &["0", "1", "1"]),
        ];
        let err = validate_dataset(&cols, &roles(&["X"], None)).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
        assert!(alloc::format!("{err}").contains("column length mismatch"));
    }

    #[test]
    fn missing_values_rejected() {
        let cols = [
            col("Y", &["1", "NA"]),
            col("S", &["A", "A"]),
            col("A", &["0", "1"]),
            col("X", &["0", "1"]),
        ];
        assert!(matches!(
            validate_dataset(&cols, &roles(&["X"], None)),
            Err(Error::MissingValue { row: 2, .. })
        ));
    }

    #[test]
    fn effect_modifier_inside_covariates_rejected() {
        let cols = [
            col("Y", &["1", "2"]),
            col("S", &["A", "A"]),
            col("A", &["0", "1"]),
            col("EM", &["a", "b"]),
        ];
        assert!(matches!(
            validate_dataset(&cols, &roles(&["EM"], Some("EM"))),
            Err(Error::EffectModifierInCovariates(_))
        ));
    }

    #[test]
    fn source_labels_sorted_numerically_when_integers() {
        let cols = [
            col("Y", &["1", "2", "3"]),
            col("S", &["10", "2", "1"]),
            col("A", &["0", "1", "1"]),
            col("X", &["0", "1", "1"]),
        ];
        let d = validate_dataset(&cols, &roles(&["X"], None)).unwrap();
        assert_eq!(d.source_labels(), &["1", "2", "10"]);
        assert_eq!(d.source(), &[2, 1, 0]);
    }

    fn two_by_three() -> MultiSourceDataset {
        let cols = [
            col("Y", &["1", "2"]),
            col("S", &["A", "B"]),
            col("A", &["0", "1"]),
            col("X1", &["0.1", "0.2"]),
            col("C", &["u", "v"]),
        ];
        validate_dataset(&cols, &roles(&["X1", "C"], None)).unwrap()
    }

    #[test]
    fn stacking_marks_external_rows() {
        let d = two_by_three();
        let ext_cols = [col("X1", &["1", "2", "3"]), col("C", &["v", "v", "u"])];
        let ext = validate_external(&ext_cols, &roles(&["X1", "C"], None), &d).unwrap();
        let st = stack_with_external(&d, &ext).unwrap();
        assert_eq!(st.n_rows(), 5);
        assert_eq!(st.source_codes().iter().filter(|&&s| s == 0).count(), 3);
        assert_eq!(st.outcome(3), None);
        assert_eq!(st.treatment(4), None);
        assert_eq!(st.source_of(1), Some(1));
    }

    #[test]
    fn external_column_order_must_match() {
        let d = two_by_three();
        let ext_cols = [col("C", &["v"]), col("X1", &["1"])];
        assert!(matches!(
            validate_external(&ext_cols, &roles(&["X1", "C"], None), &d),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn unseen_external_level_rejected() {
        let d = two_by_three();
        let ext_cols = [col("X1", &["1"]), col("C", &["w"])];
        assert!(matches!(
            validate_external(&ext_cols, &roles(&["X1", "C"], None), &d),
            Err(Error::UnseenLevel { .. })
        ));
    }

    #[test]
    fn external_effect_modifier_required_when_internal_has_one() {
        let cols = [
            col("Y", &["1", "2"]),
            col("S", &["A", "A"]),
            col("A", &["0", "1"]),
            col("X", &["0", "1"]),
            col("EM", &["a", "b"]),
        ];
        let d = validate_dataset(&cols, &roles(&["X"], Some("EM"))).unwrap();
        let ext = ExternalSample::new(
            CovariateTable::new(vec![Covariate::numeric("X", vec![0.3])], 1).unwrap(),
            None,
        )
        .unwrap();
        assert!(matches!(stack_with_external(&d, &ext), Err(Error::MissingRole(_))));
    }
}
