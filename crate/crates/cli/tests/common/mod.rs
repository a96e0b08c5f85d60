#![allow(dead_code)]

use std::path::{Path, PathBuf};

use txmeta_core::simulate::{SimConfig, SimulatedData, Simulator};
use txmeta_core::{run_analysis, AnalysisConfig, AnalysisKind, AnalysisResult, NuisanceSpec, Sequential};

pub fn simulated(n: usize, em_levels: usize) -> SimulatedData {
    Simulator::new(SimConfig::small(3, n, n, 3, em_levels)).unwrap().generate(0).unwrap()
}

/// A quick parametric analysis of a small simulated dataset.
pub fn quick_result(kind: AnalysisKind) -> AnalysisResult {
    let SimulatedData { data, external } = simulated(200, 3);
    let mut config = AnalysisConfig::new(kind, NuisanceSpec::parametric());
    config.replications = 2;
    config.scb_draws = 5000;
    run_analysis(&config, &data, kind.external().then_some(&external), &Sequential).unwrap()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_txmeta")
}

/// Simulated `multi_source.csv` and `external.csv` plus a fast run
/// configuration `run.json`, all in `dir`.
pub fn write_inputs(dir: &Path) -> PathBuf {
    std::fs::write(
        dir.join("sim.json"),
        r#"{"source_sizes": [120, 100, 90], "n_external": 150, "covariates": 3,
            "source_slopes": [[0,0,0],[0.4,-0.3,0.2],[-0.3,0.2,0]],
            "treatment_slopes": [0.3,-0.2,0.1], "outcome_slopes": [1,0.5,-0.5],
            "effect_slopes": [0.8,-0.4,0.3], "external_shift": [0.3,-0.2,0.2],
            "em_levels": 3, "em_outcome": [0,0.5,1], "em_effect": [-0.4,0,0.4],
            "oracle_n": 10000, "output_dir": "."}"#,
    )
    .unwrap();
    let code = txmeta::run_cli(["txmeta", "simulate", "--config", dir.join("sim.json").to_str().unwrap()]);
    assert_eq!(code, 0);
    let config = dir.join("run.json");
    std::fs::write(
        &config,
        r#"{"data": "multi_source.csv", "external_data": "external.csv",
            "columns": {"effect_modifier": "EM", "categorical": ["EM"]},
            "outcome_model": {"candidates": [{"kind": "glm"}], "stacking": "convex-stack", "cv_folds": 3},
            "treatment_model": {"candidates": [{"kind": "glm"}], "stacking": "convex-stack", "cv_folds": 3},
            "external_model": {"candidates": [{"kind": "glm"}], "stacking": "convex-stack", "cv_folds": 3},
            "source_model": "mn-glm", "replications": 2, "scb_draws": 5000, "output_dir": "out"}"#,
    )
    .unwrap();
    config
}
