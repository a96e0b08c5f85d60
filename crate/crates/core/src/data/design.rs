use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{CovariateKind, CovariateValues, MultiSourceDataset, StackedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Intercept,
    Continuous,
    /// 0/1 column: a binary covariate or a one-hot level.
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Intercept,
    Numeric(usize),
    Level(usize, u32),
    EffectModifier(u32),
    Source(usize),
    Treatment,
    Given,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnInfo {
    pub name: String,
    pub kind: ColumnKind,
    origin: Origin,
}

impl ColumnInfo {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> ColumnInfo {
        ColumnInfo {
            name: name.into(),
            kind,
            origin: Origin::Given,
        }
    }
}

/// Which optional blocks enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DesignOptions {
    pub effect_modifier: bool,
    pub source: bool,
    pub treatment: bool,
}

/// Per-column location and scale of the rows the design was built from
/// (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

/// Numeric design with its column dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    columns: Arc<[ColumnInfo]>,
    standardization: Vec<Standardization>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, columns: Vec<ColumnInfo>) -> DesignMatrix {
        assert_eq!(values.ncols(), columns.len(), "column dictionary size");
        Self::with_shared(values, columns.into())
    }

    fn with_shared(values: DMatrix<f64>, columns: Arc<[ColumnInfo]>) -> DesignMatrix {
        let n = values.nrows().max(1) as f64;
        let standardization = values
            .column_iter()
            .zip(columns.iter())
            .map(|(c, info)| {
                if info.kind == ColumnKind::Intercept {
                    return Standardization {
                        center: 0.0,
                        scale: 1.0,
                    };
                }
                let mean = c.iter().sum::<f64>() / n;
                let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                Standardization {
                    center: mean,
                    scale: libm::sqrt(var),
                }
            })
            .collect();
        DesignMatrix {
            values,
            columns,
            standardization,
        }
    }

    /// Intercept column followed by the given continuous columns; handy for
    /// building designs by hand.
    pub fn with_intercept(columns: &[Vec<f64>]) -> DesignMatrix {
        let n = columns.first().map_or(0, Vec::len);
        let mut values = DMatrix::from_element(n, columns.len() + 1, 1.0);
        let mut info = alloc::vec![ColumnInfo::new("(Intercept)", ColumnKind::Intercept)];
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), n);
            values.column_mut(j + 1).copy_from_slice(c);
            info.push(ColumnInfo::new(format!("x{}", j + 1), ColumnKind::Continuous));
        }
        DesignMatrix::new(values, info)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.columns
            .first()
            .is_some_and(|c| c.kind == ColumnKind::Intercept)
    }

    /// Rows `rows` of this design (column dictionary shared).
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let p = self.n_cols();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| self.values[(rows[i], j)]);
        Self::with_shared(values, self.columns.clone())
    }
}

/// Column dictionary learned from a dataset's schema; encodes any row subset
/// (internal or external) into the same columns.
///
/// Order: intercept, covariates in table order (categoricals expanded to
/// their non-reference levels), effect-modifier levels, source indicators,
/// treatment.
#[derive(Debug, Clone)]
pub struct Encoder {
    columns: Arc<[ColumnInfo]>,
}

impl Encoder {
    pub fn new(data: &StackedDataset, options: DesignOptions) -> Encoder {
        let mut cols = alloc::vec![ColumnInfo {
            name: "(Intercept)".into(),
            kind: ColumnKind::Intercept,
            origin: Origin::Intercept,
        }];
        for (idx, cov) in data.covariates().columns().iter().enumerate() {
            match (&cov.values, cov.kind) {
                (CovariateValues::Numeric(_), kind) => cols.push(ColumnInfo {
                    name: cov.name.clone(),
                    kind: if kind == CovariateKind::Binary {
                        ColumnKind::Indicator
                    } else {
                        ColumnKind::Continuous
                    },
                    origin: Origin::Numeric(idx),
                }),
                (CovariateValues::Categorical(c), _) => {
                    for (code, level) in c.levels().iter().enumerate().skip(1) {
                        cols.push(ColumnInfo {
                            name: format!("{}={}", cov.name, level),
                            kind: ColumnKind::Indicator,
                            origin: Origin::Level(idx, code as u32),
                        });
                    }
                }
            }
        }
        if options.effect_modifier {
            if let Some(em) = data.effect_modifier() {
                for (code, level) in em.values.levels().iter().enumerate().skip(1) {
                    cols.push(ColumnInfo {
                        name: format!("{}={}", em.name, level),
                        kind: ColumnKind::Indicator,
                        origin: Origin::EffectModifier(code as u32),
                    });
                }
            }
        }
        if options.source {
            for (s, label) in data.source_labels().iter().enumerate().skip(1) {
                cols.push(ColumnInfo {
                    name: format!("S={label}"),
                    kind: ColumnKind::Indicator,
                    origin: Origin::Source(s),
                });
            }
        }
        if options.treatment {
            cols.push(ColumnInfo {
                name: "A".into(),
                kind: ColumnKind::Indicator,
                origin: Origin::Treatment,
            });
        }
        Encoder {
            columns: cols.into(),
        }
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn encode(&self, data: &StackedDataset, rows: &[usize]) -> DesignMatrix {
        self.encode_impl(data, rows, None)
    }

    /// Encode with every row's source indicator set to `source`; used to
    /// predict a joint treatment model under each source.
    pub fn encode_as_source(&self, data: &StackedDataset, rows: &[usize], source: usize) -> DesignMatrix {
        self.encode_impl(data, rows, Some(source))
    }

    fn encode_impl(&self, data: &StackedDataset, rows: &[usize], source: Option<usize>) -> DesignMatrix {
        let n = rows.len();
        let covs = data.covariates().columns();
        let mut values = DMatrix::zeros(n, self.columns.len());
        for (j, info) in self.columns.iter().enumerate() {
            let mut col = values.column_mut(j);
            match info.origin {
                Origin::Intercept => col.fill(1.0),
                Origin::Numeric(idx) => {
                    if let CovariateValues::Numeric(v) = &covs[idx].values {
                        for (i, &r) in rows.iter().enumerate() {
                            col[i] = v[r];
                        }
                    }
                }
                Origin::Level(idx, code) => {
                    if let CovariateValues::Categorical(c) = &covs[idx].values {
                        for (i, &r) in rows.iter().enumerate() {
                            col[i] = f64::from(u8::from(c.codes()[r] == code));
                        }
                    }
                }
                Origin::EffectModifier(code) => {
                    for (i, &r) in rows.iter().enumerate() {
                        col[i] = f64::from(u8::from(data.em_code(r) == Some(code)));
                    }
                }
                Origin::Source(s) => {
                    for (i, &r) in rows.iter().enumerate() {
                        let row_source = source.or_else(|| data.source_of(r));
                        col[i] = f64::from(u8::from(row_source == Some(s)));
                    }
                }
                Origin::Treatment => {
                    for (i, &r) in rows.iter().enumerate() {
                        col[i] = f64::from(data.treatment(r).unwrap_or(0));
                    }
                }
                Origin::Given => unreachable!("encoder columns always carry an origin"),
            }
        }
        DesignMatrix::with_shared(values, self.columns.clone())
    }
}

/// Encode every row of an internal dataset. The effect modifier, when
/// present, enters as a categorical covariate.
pub fn encode_design(
    data: &MultiSourceDataset,
    include_treatment: bool,
    include_source: bool,
) -> DesignMatrix {
    let stacked = StackedDataset::internal(data);
    let encoder = Encoder::new(
        &stacked,
        DesignOptions {
            effect_modifier: true,
            source: include_source,
            treatment: include_treatment,
        },
    );
    encoder.encode(&stacked, &stacked.all_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, CovariateTable, MultiSourceDataset};
    use alloc::string::ToString;
    use alloc::vec;

    fn dataset(sources: &[&str], cat: &[&str]) -> MultiSourceDataset {
        let n = sources.len();
        let labels: Vec<String> = sources.iter().map(|s| s.to_string()).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let mut cols = vec![Covariate::numeric("x", x)];
        if !cat.is_empty() {
            cols.push(Covariate::categorical("c", cat));
        }
        MultiSourceDataset::new(
            vec![0.0; n],
            &labels,
            (0..n).map(|i| (i % 2) as u8).collect(),
            CovariateTable::new(cols, n).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn intercept_plus_continuous() {
        let d = dataset(&["A", "A", "A"], &[]);
        let m = encode_design(&d, false, false);
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.n_cols(), 2);
        assert_eq!(m.values().column(0).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(m.values().column(1).as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn categorical_drops_reference_level() {
        let d = dataset(&["A", "A", "A"], &["b", "a", "c"]);
        let m = encode_design(&d, false, false);
        assert_eq!(m.n_cols(), 4);
        assert_eq!(m.columns()[2].name, "c=b");
        assert_eq!(m.values().column(2).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(m.values().column(3).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn source_indicators() {
        let d = dataset(&["A", "B", "C", "A"], &[]);
        let m = encode_design(&d, true, true);
        // intercept, x, S=B, S=C, A
        assert_eq!(m.n_cols(), 5);
        assert_eq!(m.values().column(2).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.values().column(3).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.values().column(4).as_slice(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn single_level_categorical_adds_no_columns() {
        let d = dataset(&["A", "A"], &["z", "z"]);
        assert_eq!(encode_design(&d, false, false).n_cols(), 2);
    }

    #[test]
    fn source_override() {
        let d = dataset(&["A", "B", "C"], &[]);
        let st = StackedDataset::internal(&d);
        let enc = Encoder::new(&st, DesignOptions { source: true, ..Default::default() });
        let m = enc.encode_as_source(&st, &[0, 1, 2], 2);
        assert_eq!(m.values().column(3).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(m.values().column(2).as_slice(), &[0.0, 0.0, 0.0]);
    }
}
