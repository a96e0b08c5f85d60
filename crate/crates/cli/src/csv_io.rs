//! CSV input and output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use txmeta_core::data::{CovariateTable, CovariateValues, EffectModifier};
use txmeta_core::{EstimateRow, ExternalSample, MultiSourceDataset, RawColumn};

use crate::error::CliError;

/// Read a headed CSV file into raw columns.
pub fn read_columns(path: &Path) -> Result<Vec<RawColumn>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Validation(format!("{}: header row required", path.display())));
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, e))?;
        for (col, field) in cells.iter_mut().zip(record.iter()) {
            col.push(field.to_string());
        }
    }
    Ok(header.into_iter().zip(cells).map(|(name, cells)| RawColumn::new(name, cells)).collect())
}

fn malformed(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => {
            // Data rows are numbered from 1; the header is line 1.
            let row = pos.as_ref().map(|p| p.line().saturating_sub(1)).unwrap_or(0);
            CliError::Validation(format!(
                "{}: malformed CSV row {row}: {len} fields, expected {expected_len}",
                path.display()
            ))
        }
        csv::ErrorKind::Io(_) => CliError::Validation(format!("{}: {e}", path.display())),
        _ => CliError::Validation(format!("{}: malformed CSV: {e}", path.display())),
    }
}

fn covariate_cell(table: &CovariateTable, j: usize, row: usize) -> String {
    match &table.columns()[j].values {
        CovariateValues::Numeric(v) => v[row].to_string(),
        CovariateValues::Categorical(c) => c.label(row).to_string(),
    }
}

fn write_frame(
    path: &Path,
    header: Vec<String>,
    n: usize,
    cell: impl Fn(usize, usize) -> String,
) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e.to_string()));
    w.write_record(&header).map_err(io)?;
    for row in 0..n {
        w.write_record((0..header.len()).map(|j| cell(row, j))).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Columns `Y, S, A, <covariates>, [EM]`.
pub fn write_dataset(path: &Path, data: &MultiSourceDataset) -> Result<(), CliError> {
    let cov = data.covariates();
    let p = cov.columns().len();
    let mut header = vec!["Y".to_string(), "S".to_string(), "A".to_string()];
    header.extend(cov.names().iter().map(|s| s.to_string()));
    let em: Option<&EffectModifier> = data.effect_modifier();
    if let Some(em) = em {
        header.push(em.name.clone());
    }
    write_frame(path, header, data.n_rows(), |row, j| match j {
        0 => data.outcome()[row].to_string(),
        1 => data.source_labels()[data.source()[row] as usize].clone(),
        2 => data.treatment()[row].to_string(),
        j if j < 3 + p => covariate_cell(cov, j - 3, row),
        _ => em.map(|e| e.values.label(row).to_string()).unwrap_or_default(),
    })
}

/// Columns `<covariates>, [EM]`.
pub fn write_external(path: &Path, external: &ExternalSample) -> Result<(), CliError> {
    let cov = external.covariates();
    let p = cov.columns().len();
    let mut header: Vec<String> = cov.names().iter().map(|s| s.to_string()).collect();
    let em = external.effect_modifier();
    if let Some(em) = em {
        header.push(em.name.clone());
    }
    write_frame(path, header, external.n_rows(), |row, j| {
        if j < p {
            covariate_cell(cov, j, row)
        } else {
            em.map(|e| e.values.label(row).to_string()).unwrap_or_default()
        }
    })
}

pub const TABLE_HEADER: [&str; 8] = [
    "target",
    "subgroup",
    "estimate",
    "se",
    "ci_lower",
    "ci_upper",
    "scb_lower",
    "scb_upper",
];

/// One estimate table; floats use the shortest round-trip representation
/// and absent fields are empty.
pub fn write_table(path: &Path, rows: &[EstimateRow]) -> Result<(), CliError> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    write_frame(path, TABLE_HEADER.iter().map(|s| s.to_string()).collect(), rows.len(), |i, j| {
        let r = &rows[i];
        match j {
            0 => r.target.clone(),
            1 => r.subgroup.clone().unwrap_or_default(),
            2 => r.estimate.to_string(),
            3 => r.se.to_string(),
            4 => r.ci_lower.to_string(),
            5 => r.ci_upper.to_string(),
            6 => opt(r.scb_lower),
            _ => opt(r.scb_upper),
        }
    })
}

/// Parse a table written by [`write_table`].
pub fn read_table(path: &Path) -> Result<Vec<EstimateRow>, CliError> {
    let columns = read_columns(path)?;
    let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    if names != TABLE_HEADER {
        return Err(CliError::Validation(format!("{}: unexpected header {names:?}", path.display())));
    }
    let n = columns[0].cells.len();
    let num = |j: usize, i: usize| -> Result<f64, CliError> {
        columns[j].cells[i]
            .parse()
            .map_err(|_| CliError::Validation(format!("{}: row {}: bad number", path.display(), i + 1)))
    };
    let opt = |j: usize, i: usize| -> Result<Option<f64>, CliError> {
        if columns[j].cells[i].is_empty() {
            Ok(None)
        } else {
            num(j, i).map(Some)
        }
    };
    (0..n)
        .map(|i| {
            Ok(EstimateRow {
                target: columns[0].cells[i].clone(),
                subgroup: Some(columns[1].cells[i].clone()).filter(|s| !s.is_empty()),
                estimate: num(2, i)?,
                se: num(3, i)?,
                ci_lower: num(4, i)?,
                ci_upper: num(5, i)?,
                scb_lower: opt(6, i)?,
                scb_upper: opt(7, i)?,
            })
        })
        .collect()
}

/// Create a file and write `contents`.
pub fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))
}
