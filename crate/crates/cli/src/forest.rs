//! Forest plots of internal-population effects as standalone SVG.
//!
//! Geometry (pixels):
//!
//! | constant        | value | meaning                                  |
//! |-----------------|-------|------------------------------------------|
//! | `ROW_HEIGHT`    | 24    | vertical space per estimate              |
//! | `TOP`           | 44    | title band above the first row           |
//! | `BOTTOM`        | 48    | axis and tick labels below the last row  |
//! | `LABEL_WIDTH`   | 150   | target labels on the left                |
//! | `ANNOT_WIDTH`   | 210   | numeric annotation column on the right   |
//! | `SIDE`          | 12    | outer horizontal margin                  |
//! | `SQUARE`        | 9     | side of the point-estimate square        |
//! | `FONT`          | 12    | font size                                |

use std::fmt::Write;

use txmeta_core::{AnalysisResult, EstimateRow};

use crate::error::CliError;
use crate::report::fmt4;

const ROW_HEIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 48.0;
const LABEL_WIDTH: f64 = 150.0;
const ANNOT_WIDTH: f64 = 210.0;
const SIDE: f64 = 12.0;
const SQUARE: f64 = 9.0;
const FONT: f64 = 12.0;
const MIN_WIDTH: u32 = 480;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestOptions {
    /// Draw simultaneous bands instead of pointwise intervals.
    pub use_scb: bool,
    /// Order rows by estimate instead of by target.
    pub sort: bool,
    pub width: u32,
}

impl Default for ForestOptions {
    fn default() -> ForestOptions {
        ForestOptions {
            use_scb: false,
            sort: false,
            width: 760,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step from {1, 2, 5} × 10ᵏ giving about `target` intervals.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let magnitude = 10f64.powf(raw.log10().floor());
    let norm = raw / magnitude;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * magnitude
}

fn interval(r: &EstimateRow, use_scb: bool) -> (f64, f64) {
    if use_scb {
        (r.scb_lower.unwrap_or(r.ci_lower), r.scb_upper.unwrap_or(r.ci_upper))
    } else {
        (r.ci_lower, r.ci_upper)
    }
}

/// Render the treatment-effect table of an internal-population result.
pub fn emit_forest_svg(result: &AnalysisResult, options: &ForestOptions) -> Result<String, CliError> {
    if result.analysis.external() {
        return Err(CliError::Validation("forest plot defined for internal targets".into()));
    }
    let mut rows: Vec<&EstimateRow> = result.df_dif.iter().collect();
    if options.use_scb && rows.iter().any(|r| r.scb_lower.is_none()) {
        return Err(CliError::Validation(
            "simultaneous bands are only available for subgroup analyses".into(),
        ));
    }
    if options.sort {
        rows.sort_by(|a, b| a.estimate.total_cmp(&b.estimate));
    }
    let width = f64::from(options.width.max(MIN_WIDTH));
    let height = TOP + ROW_HEIGHT * rows.len() as f64 + BOTTOM;
    let plot_left = SIDE + LABEL_WIDTH;
    let plot_right = width - SIDE - ANNOT_WIDTH;

    let (mut lo, mut hi) = rows.iter().fold((0.0f64, 0.0f64), |(lo, hi), r| {
        let (l, u) = interval(r, options.use_scb);
        (lo.min(l), hi.max(u))
    });
    if hi - lo <= 0.0 {
        lo -= 1.0;
        hi += 1.0;
    }
    let step = tick_step(hi - lo, 6.0);
    lo = (lo / step).floor() * step;
    hi = (hi / step).ceil() * step;
    let x = |v: f64| plot_left + (v - lo) / (hi - lo) * (plot_right - plot_left);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="{FONT}">
<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#,
        w = width,
        h = height
    );
    let band = if options.use_scb { "simultaneous band" } else { "confidence interval" };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-weight="bold">Treatment effect (estimate, {band})</text>"#,
        SIDE,
        TOP / 2.0
    );
    let axis_y = TOP + ROW_HEIGHT * rows.len() as f64 + 6.0;
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            x(0.0),
            TOP - 6.0,
            axis_y
        );
    }
    let subgroups = rows.iter().any(|r| r.subgroup.is_some());
    for (i, r) in rows.iter().enumerate() {
        let cy = TOP + ROW_HEIGHT * (i as f64 + 0.5);
        let label = match (&r.subgroup, subgroups) {
            (Some(g), true) => format!("{} / {}", r.target, g),
            _ => r.target.clone(),
        };
        let (l, u) = interval(r, options.use_scb);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            SIDE,
            cy + FONT / 3.0,
            escape(&label)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}" stroke="black" stroke-width="1.5"/>"#,
            x(l),
            x(u)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{SQUARE}" height="{SQUARE}" fill="black"/>"#,
            x(r.estimate) - SQUARE / 2.0,
            cy - SQUARE / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{} [{}, {}]</text>"#,
            plot_right + 12.0,
            cy + FONT / 3.0,
            fmt4(r.estimate),
            fmt4(l),
            fmt4(u)
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{plot_left:.2}" y1="{axis_y:.2}" x2="{plot_right:.2}" y2="{axis_y:.2}" stroke="black"/>"#
    );
    let ticks = ((hi - lo) / step).round() as i64;
    for t in 0..=ticks {
        let v = lo + step * t as f64;
        let tx = x(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{tx:.2}" y1="{axis_y:.2}" x2="{tx:.2}" y2="{:.2}" stroke="black"/>"#,
            axis_y + 5.0
        );
        let shown = if v.abs() < step * 1e-9 { 0.0 } else { v };
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            axis_y + 5.0 + FONT * 1.3,
            shown
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nice_steps() {
        assert_eq!(tick_step(10.0, 5.0), 2.0);
        assert_eq!(tick_step(1.0, 4.0), 0.5);
        assert_eq!(tick_step(0.03, 6.0), 0.005);
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
