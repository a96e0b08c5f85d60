//! Human-readable summary in the conventional printed layout.

use std::fmt::Write;

use txmeta_core::{AnalysisKind, AnalysisResult, EstimateRow};

fn title(kind: AnalysisKind) -> &'static str {
    match kind {
        AnalysisKind::AteInternal => "AVERAGE TREATMENT EFFECT ESTIMATES IN INTERNAL POPULATIONS",
        AnalysisKind::AteExternal => "AVERAGE TREATMENT EFFECT ESTIMATES IN AN EXTERNAL POPULATION",
        AnalysisKind::SteInternal => "SUBGROUP TREATMENT EFFECT ESTIMATES IN INTERNAL POPULATIONS",
        AnalysisKind::SteExternal => "SUBGROUP TREATMENT EFFECT ESTIMATES IN AN EXTERNAL POPULATION",
    }
}

const SECTIONS: [(usize, &str); 3] = [
    (2, "Treatment effect (mean difference) estimates:"),
    (0, "Potential outcome mean estimates under A = 0:"),
    (1, "Potential outcome mean estimates under A = 1:"),
];

pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn table(out: &mut String, kind: AnalysisKind, rows: &[EstimateRow]) {
    let mut header: Vec<&str> = Vec::new();
    if !kind.external() {
        header.push("Source");
    }
    if kind.subgroups() {
        header.push("Subgroup");
    }
    header.extend(["Estimate", "SE", "CI_lower", "CI_upper"]);
    let with_bands = rows.iter().any(|r| r.scb_lower.is_some());
    if with_bands {
        header.extend(["SCB_lower", "SCB_upper"]);
    }
    let mut cells: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    let mut previous: Option<&str> = None;
    for r in rows {
        let mut line = Vec::new();
        if !kind.external() {
            // Source labels appear once per group of subgroup rows.
            let show = previous != Some(r.target.as_str()) || !kind.subgroups();
            line.push(if show { r.target.clone() } else { String::new() });
            previous = Some(&r.target);
        }
        if kind.subgroups() {
            line.push(r.subgroup.clone().unwrap_or_default());
        }
        line.extend([r.estimate, r.se, r.ci_lower, r.ci_upper].map(fmt4));
        if with_bands {
            line.push(r.scb_lower.map(fmt4).unwrap_or_default());
            line.push(r.scb_upper.map(fmt4).unwrap_or_default());
        }
        cells.push(line);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| cells.iter().map(|c| c[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let render = |out: &mut String, items: &[&str]| {
        for (item, w) in items.iter().zip(&widths) {
            let _ = write!(out, " {item:>w$}");
        }
        out.push('\n');
    };
    render(out, &header);
    for c in &cells {
        render(out, &c.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

/// Effects, then A = 0 means, then A = 1 means, then the learner libraries
/// and run settings.
pub fn format_summary(result: &AnalysisResult) -> String {
    let kind = result.analysis;
    let mut out = String::new();
    out.push_str(title(kind));
    out.push_str("\n\n");
    for (i, (index, heading)) in SECTIONS.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(heading);
        out.push('\n');
        out.push_str(&"-".repeat(heading.len()));
        out.push('\n');
        table(&mut out, kind, result.table(*index));
    }
    let m = &result.metadata;
    let l = &m.learners;
    out.push_str("\n\nLearner libraries used:\n----------------------\n");
    let _ = writeln!(out, "Outcome model: {} ({})", l.outcome.join(", "), l.outcome_family);
    let type_name = match l.treatment_model_type {
        txmeta_core::nuisance::TreatmentModelType::Joint => "joint",
        txmeta_core::nuisance::TreatmentModelType::Separate => "separate",
    };
    let _ = writeln!(out, "Treatment model: {} ({type_name})", l.treatment.join(", "));
    let _ = writeln!(out, "Source model: NA (model fit via {})", l.source);
    if let Some(ext) = &l.external {
        let _ = writeln!(out, "External model: {}", ext.join(", "));
    }
    out.push_str("\nSettings:\n---------\n");
    match m.folds {
        Some(k) => {
            let _ = writeln!(out, "Cross-fitting: {k} folds, {} replications", m.replications);
        }
        None => out.push_str("Cross-fitting: disabled\n"),
    }
    let _ = writeln!(out, "Seed: {}", m.seed);
    let _ = writeln!(out, "Probability clipping: {}", m.clip_epsilon);
    let _ = writeln!(out, "Confidence level: {}", m.level);
    if let Some(draws) = m.scb_draws {
        let _ = writeln!(out, "Simultaneous bands: sup-t, {draws} draws");
    }
    if !result.warnings.is_empty() {
        out.push_str("\nWarnings:\n---------\n");
        for w in &result.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}
