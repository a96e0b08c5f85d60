mod common;

use std::process::{Command, Output};

use serde_json::Value;

fn txmeta(args: &[&str]) -> Output {
    Command::new(common::bin())
        .args(args)
        .env_remove(txmeta::config::SEED_ENV)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn results(dir: &std::path::Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("results.json")).unwrap()).unwrap()
}

#[test]
fn ate_external_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let o = txmeta(&["ate-external", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["results.json", "df_A0.csv", "df_A1.csv", "df_dif.csv", "summary.txt", "timings.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(!out.join("forest.svg").exists());
    let doc = results(&out);
    assert_eq!(doc["metadata"]["folds"], 5);
    assert_eq!(doc["df_dif"][0]["target"], "external");
    assert!(doc.get("timings").is_none());
    let dif = std::fs::read_to_string(out.join("df_dif.csv")).unwrap();
    assert!(dif.starts_with("target,subgroup,estimate,se,ci_lower,ci_upper,scb_lower,scb_upper\n"));
    assert!(dif.lines().nth(1).unwrap().ends_with(",,"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Treatment effect (mean difference) estimates:"));
}

#[test]
fn internal_runs_draw_a_forest_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let out = dir.path().join("ste");
    let o = txmeta(&["ste-internal", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap(), "--set", "forest.use_scb=true"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("forest.svg")).unwrap();
    assert_eq!(svg.matches(r#"fill="black"/>"#).count(), 9);
}

#[test]
fn missing_effect_modifier_names_the_role() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let o = txmeta(&["ste-internal", "--config", config.to_str().unwrap(), "--set", "columns.effect_modifier=null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("effect_modifier"), "{}", stderr(&o));
}

#[test]
fn missing_external_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let o = txmeta(&["ste-external", "--config", config.to_str().unwrap(), "--set", "external_data=null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("external"), "{}", stderr(&o));
}

#[test]
fn malformed_row_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let csv = dir.path().join("multi_source.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let broken: Vec<String> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| if i == 7 { l.rsplit_once(',').unwrap().0.to_string() } else { l.to_string() })
        .collect();
    text = broken.join("\n") + "\n";
    std::fs::write(&csv, text).unwrap();
    let o = txmeta(&["ate-internal", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 7"), "{}", stderr(&o));
}

#[test]
fn non_numeric_outcome_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let csv = dir.path().join("multi_source.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let rest = lines[3].split_once(',').unwrap().1.to_string();
    lines[3] = format!("abc,{rest}");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let o = txmeta(&["ate-internal", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_64() {
    let o = txmeta(&["ate-internal", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(txmeta(&["estimate-everything"]).status.code(), Some(64));
    assert_eq!(txmeta(&["ate-internal", "--set", "noequals"]).status.code(), Some(64));
    assert_eq!(txmeta(&["--version"]).status.code(), Some(0));
}

#[test]
fn seed_precedence_is_file_then_environment_then_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let cfg = config.to_str().unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| -> Value {
        let out = dir.path().join("seeded");
        let mut cmd = Command::new(common::bin());
        cmd.args(["ate-internal", "--config", cfg, "--output", out.to_str().unwrap()]).args(extra);
        match env {
            Some(v) => cmd.env(txmeta::config::SEED_ENV, v),
            None => cmd.env_remove(txmeta::config::SEED_ENV),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        results(&out)["metadata"]["seed"].clone()
    };
    assert_eq!(seed_of(&[], None), 0);
    assert_eq!(seed_of(&[], Some("17")), 17);
    assert_eq!(seed_of(&["--set", "seed=5"], Some("17")), 5);
}

#[test]
fn relative_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_inputs(dir.path());
    let elsewhere = tempfile::tempdir().unwrap();
    let o = Command::new(common::bin())
        .current_dir(elsewhere.path())
        .args(["ate-internal", "--config", config.to_str().unwrap()])
        .env_remove(txmeta::config::SEED_ENV)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/results.json").exists());
}

#[test]
fn simulate_writes_data_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    common::write_inputs(dir.path());
    let truth: Value = serde_json::from_slice(&std::fs::read(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["internal_ate"].as_array().unwrap().len(), 3);
    assert_eq!(truth["external_ste"].as_array().unwrap().len(), 3);
    assert_eq!(truth["source_labels"], serde_json::json!(["A", "B", "C"]));
    let header = std::fs::read_to_string(dir.path().join("multi_source.csv")).unwrap();
    assert!(header.starts_with("Y,S,A,X1,X2,X3,EM\n"));
    let o = txmeta(&["simulate", "--set", "source_sizes=[0]", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
