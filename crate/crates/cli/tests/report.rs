mod common;

use proptest::prelude::*;
use txmeta::csv_io::{read_columns, read_table, write_dataset, write_table};
use txmeta::forest::{emit_forest_svg, ForestOptions};
use txmeta::report::{fmt4, format_summary};
use txmeta_core::{validate_dataset, AnalysisKind, AnalysisResult, ColumnRoles, EstimateRow};

/// Every 4-decimal number in the summary's table rows, in reading order.
fn summary_numbers(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_table = false;
    for line in text.lines() {
        if line.trim_start().starts_with("Source") || line.trim_start().starts_with("Subgroup") || line.trim_start().starts_with("Estimate") {
            in_table = true;
            continue;
        }
        if line.trim().is_empty() {
            in_table = false;
        }
        if in_table {
            out.extend(
                line.split_whitespace()
                    .filter(|t| t.parse::<f64>().is_ok() && t.split_once('.').is_some_and(|(_, d)| d.len() == 4))
                    .map(String::from),
            );
        }
    }
    out
}

fn expected_numbers(result: &AnalysisResult) -> Vec<String> {
    let mut out = Vec::new();
    for table in [2, 0, 1] {
        for r in result.table(table) {
            out.extend([r.estimate, r.se, r.ci_lower, r.ci_upper].map(fmt4));
            if let (Some(l), Some(u)) = (r.scb_lower, r.scb_upper) {
                out.extend([fmt4(l), fmt4(u)]);
            }
        }
    }
    out
}

#[test]
fn summary_numbers_parse_back_to_the_json_values() {
    for kind in [AnalysisKind::AteInternal, AnalysisKind::AteExternal, AnalysisKind::SteInternal, AnalysisKind::SteExternal] {
        let result = common::quick_result(kind);
        let json = serde_json::to_string(&result).unwrap();
        let back: AnalysisResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, result);
        let text = format_summary(&back);
        assert_eq!(summary_numbers(&text), expected_numbers(&back), "{kind:?}\n{text}");
    }
}

#[test]
fn summary_sections_follow_the_printed_order() {
    let text = format_summary(&common::quick_result(AnalysisKind::SteInternal));
    let at = |s: &str| text.find(s).unwrap_or_else(|| panic!("missing {s:?}\n{text}"));
    assert!(at("Treatment effect (mean difference)") < at("under A = 0"));
    assert!(at("under A = 0") < at("under A = 1"));
    assert!(at("under A = 1") < at("Learner libraries used:"));
    assert!(text.contains("SCB_lower"));
    // Three sources with three subgroups each; the source label appears once per group.
    let effects: Vec<&str> = text.lines().skip_while(|l| !l.contains("Estimate")).skip(1).take_while(|l| !l.trim().is_empty()).collect();
    assert_eq!(effects.len(), 9);
    assert_eq!(effects.iter().filter(|l| l.split_whitespace().count() == 8).count(), 3);

    let ate = format_summary(&common::quick_result(AnalysisKind::AteInternal));
    let row = ate.lines().find(|l| l.trim_start().starts_with("A ")).unwrap();
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields.len(), 5);
    assert!(!ate.contains("SCB_lower"));
}

#[test]
fn tables_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let result = common::quick_result(AnalysisKind::SteExternal);
    for t in 0..3 {
        let path = dir.path().join(format!("t{t}.csv"));
        write_table(&path, result.table(t)).unwrap();
        let back = read_table(&path).unwrap();
        for (a, b) in back.iter().zip(result.table(t)) {
            assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
            assert_eq!(a.se.to_bits(), b.se.to_bits());
            assert_eq!(a.scb_upper.map(f64::to_bits), b.scb_upper.map(f64::to_bits));
        }
        assert_eq!(back, result.table(t));
    }
}

#[test]
fn dataset_csv_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::simulated(50, 3).data;
    let first = dir.path().join("a.csv");
    write_dataset(&first, &data).unwrap();
    let columns = read_columns(&first).unwrap();
    let roles = ColumnRoles {
        outcome: "Y".into(),
        source: "S".into(),
        treatment: "A".into(),
        effect_modifier: Some("EM".into()),
        covariates: vec!["X1".into(), "X2".into(), "X3".into()],
        categorical: vec!["EM".into()],
    };
    let back = validate_dataset(&columns, &roles).unwrap();
    assert!(back.outcome().iter().zip(data.outcome()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let second = dir.path().join("b.csv");
    write_dataset(&second, &back).unwrap();
    assert_eq!(std::fs::read(first).unwrap(), std::fs::read(second).unwrap());
}

/// (x1, x2) of every whisker line, in row order.
fn whiskers(svg: &str) -> Vec<(f64, f64)> {
    svg.lines()
        .filter(|l| l.contains(r#"stroke-width="1.5""#))
        .map(|l| {
            let attr = |name: &str| -> f64 {
                let start = l.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
                l[start..].split('"').next().unwrap().parse().unwrap()
            };
            (attr("x1"), attr("x2"))
        })
        .collect()
}

/// Interval bounds printed in the annotation column.
fn annotated(svg: &str) -> Vec<(f64, f64)> {
    svg.lines()
        .filter_map(|l| {
            let inner = l.split_once('[')?.1.split_once(']')?.0;
            let (a, b) = inner.split_once(", ")?;
            Some((a.parse().ok()?, b.parse().ok()?))
        })
        .collect()
}

#[test]
fn forest_plot_has_one_row_per_target() {
    let result = common::quick_result(AnalysisKind::AteInternal);
    let svg = emit_forest_svg(&result, &ForestOptions::default()).unwrap();
    assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(whiskers(&svg).len(), 3);
    assert_eq!(svg.matches(r#"fill="black"/>"#).count(), 3);
    assert_eq!(svg, emit_forest_svg(&result, &ForestOptions::default()).unwrap());
    let err = emit_forest_svg(&result, &ForestOptions { use_scb: true, ..ForestOptions::default() });
    assert!(err.is_err());
}

#[test]
fn simultaneous_whiskers_contain_pointwise_ones() {
    let result = common::quick_result(AnalysisKind::SteInternal);
    let ci = emit_forest_svg(&result, &ForestOptions::default()).unwrap();
    let scb = emit_forest_svg(&result, &ForestOptions { use_scb: true, ..ForestOptions::default() }).unwrap();
    let (a, b) = (annotated(&ci), annotated(&scb));
    assert_eq!(a.len(), 9);
    for (c, s) in a.iter().zip(&b) {
        assert!(s.1 - s.0 >= c.1 - c.0);
    }
    // Pixel geometry agrees with the data: longer intervals draw longer whiskers.
    let pixels = whiskers(&scb);
    for (i, j) in (0..9).zip(1..9) {
        let (wi, wj) = (pixels[i].1 - pixels[i].0, pixels[j].1 - pixels[j].0);
        let (di, dj) = (b[i].1 - b[i].0, b[j].1 - b[j].0);
        if (di - dj).abs() > 1e-3 {
            assert_eq!(wi < wj, di < dj);
        }
    }
    let sorted = emit_forest_svg(&result, &ForestOptions { sort: true, ..ForestOptions::default() }).unwrap();
    let marks: Vec<f64> = annotated(&sorted).iter().map(|(l, u)| 0.5 * (l + u)).collect();
    assert!(marks.windows(2).all(|w| w[0] <= w[1] + 1e-3));
}

#[test]
fn external_results_have_no_forest_plot() {
    let result = common::quick_result(AnalysisKind::AteExternal);
    let err = emit_forest_svg(&result, &ForestOptions::default()).unwrap_err();
    assert_eq!(err.to_string(), "forest plot defined for internal targets");
}

fn row() -> impl Strategy<Value = EstimateRow> {
    let finite = proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO;
    (finite, finite, finite, finite, proptest::option::of((finite, finite)), "[A-Za-z][A-Za-z0-9 ]{0,8}", proptest::option::of("[a-z]{1,3}"))
        .prop_map(|(estimate, se, ci_lower, ci_upper, band, target, subgroup)| EstimateRow {
            target,
            subgroup,
            estimate,
            se,
            ci_lower,
            ci_upper,
            scb_lower: band.map(|b| b.0),
            scb_upper: band.map(|b| b.1),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_finite_table_round_trips(rows in proptest::collection::vec(row(), 0..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table(&path, &rows).unwrap();
        prop_assert_eq!(read_table(&path).unwrap(), rows);
    }
}
