//! Command-line driver.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use txmeta_core::simulate::{SimConfig, Simulator, TrueEffects};
use txmeta_core::{run_analysis, validate_dataset, validate_external, AnalysisKind, AnalysisResult};

use crate::config::{load_document, load_run_config, RunConfig, SEED_ENV};
use crate::csv_io::{read_columns, write_dataset, write_external, write_table, write_text};
use crate::error::CliError;
use crate::forest::{emit_forest_svg, ForestOptions};
use crate::report::format_summary;
use crate::runner::PoolExecutor;

#[derive(Debug, Parser)]
#[command(name = "txmeta", version, about = "Doubly robust treatment effects in internal and external populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Average treatment effects in each source population.
    AteInternal(CommonArgs),
    /// Average treatment effect in an external covariate-only population.
    AteExternal(CommonArgs),
    /// Subgroup treatment effects in each source population.
    SteInternal(CommonArgs),
    /// Subgroup treatment effects in an external population.
    SteExternal(CommonArgs),
    /// Write a synthetic multi-source dataset, external sample and truth.
    Simulate(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set replications=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the configuration).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 64,
            };
        }
    };
    let outcome = match cli.command {
        Command::AteInternal(a) => analyse(AnalysisKind::AteInternal, &a),
        Command::AteExternal(a) => analyse(AnalysisKind::AteExternal, &a),
        Command::SteInternal(a) => analyse(AnalysisKind::SteInternal, &a),
        Command::SteExternal(a) => analyse(AnalysisKind::SteExternal, &a),
        Command::Simulate(a) => simulate(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct Timings {
    workers: usize,
    read_seconds: f64,
    analysis_seconds: f64,
    write_seconds: f64,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn analyse(kind: AnalysisKind, args: &CommonArgs) -> Result<(), CliError> {
    let mut config = load_run_config(args.config.as_deref(), &args.set)?;
    if let Some(dir) = &args.output {
        config.output_dir = dir.clone();
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    let executor = PoolExecutor::new(config.workers)?;

    let started = Instant::now();
    let data_path = config
        .data
        .clone()
        .ok_or_else(|| CliError::Validation("configuration: `data` (multi-source CSV) is required".into()))?;
    let columns = read_columns(&data_path)?;
    let header: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
    let roles = config.columns.roles(&header);
    let data = validate_dataset(&columns, &roles)?;
    let external = match (&config.external_data, kind.external()) {
        (Some(path), true) => {
            let ext_columns = read_columns(path)?;
            Some(validate_external(&ext_columns, &roles, &data)?)
        }
        _ => None,
    };
    let read_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let result = run_analysis(&config.analysis(kind), &data, external.as_ref(), &executor)?;
    let analysis_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let summary = format_summary(&result);
    write_outputs(&config, &result, &summary)?;
    let timings = Timings {
        workers: executor.workers(),
        read_seconds,
        analysis_seconds,
        write_seconds: started.elapsed().as_secs_f64(),
    };
    write_text(&config.output_dir.join("timings.json"), &to_json(&timings))?;
    print!("{summary}");
    Ok(())
}

/// `results.json`, the three CSV tables, `summary.txt` and, for internal
/// targets, `forest.svg`.
pub fn write_outputs(config: &RunConfig, result: &AnalysisResult, summary: &str) -> Result<(), CliError> {
    let dir = &config.output_dir;
    create_dir(dir)?;
    write_text(&dir.join("results.json"), &to_json(result))?;
    for (name, rows) in [("df_A0", &result.df_a0), ("df_A1", &result.df_a1), ("df_dif", &result.df_dif)] {
        write_table(&dir.join(format!("{name}.csv")), rows)?;
    }
    write_text(&dir.join("summary.txt"), summary)?;
    if config.forest.enabled && !result.analysis.external() {
        let options = ForestOptions {
            use_scb: config.forest.use_scb,
            sort: config.forest.sort,
            width: config.forest.width,
        };
        write_text(&dir.join("forest.svg"), &emit_forest_svg(result, &options)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Truth<'a> {
    replicate: u64,
    oracle_n: usize,
    oracle_seed: u64,
    source_labels: &'a [String],
    em_levels: Vec<String>,
    #[serde(flatten)]
    effects: TrueEffects,
    /// Closed-form external effects when the design admits them.
    closed_form_external: Option<ClosedForm>,
}

#[derive(Serialize)]
struct ClosedForm {
    ate: f64,
    ste: Vec<f64>,
}

const DEFAULT_ORACLE_N: usize = 1_000_000;

fn take_u64(doc: &mut Value, key: &str, default: u64) -> Result<u64, CliError> {
    match doc.as_object_mut().and_then(|o| o.remove(key)) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| CliError::Validation(format!("configuration: `{key}` must be an unsigned integer"))),
    }
}

fn simulate(args: &CommonArgs) -> Result<(), CliError> {
    let mut doc = load_document(args.config.as_deref(), &[])?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
        doc["seed"] = Value::from(seed);
    }
    for o in &args.set {
        crate::config::apply_override(&mut doc, o)?;
    }
    let replicate = take_u64(&mut doc, "replicate", 0)?;
    let oracle_n = take_u64(&mut doc, "oracle_n", DEFAULT_ORACLE_N as u64)? as usize;
    let oracle_seed = take_u64(&mut doc, "oracle_seed", 1)?;
    let configured_dir = match doc.as_object_mut().and_then(|o| o.remove("output_dir")) {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(CliError::Validation("configuration: `output_dir` must be a string".into())),
    };
    let base = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let dir = match (&args.output, configured_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) if d.is_relative() => base.join(d),
        (None, Some(d)) => d,
        (None, None) => base.join("txmeta-sim"),
    };
    let sim_config: SimConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("configuration: {e}")))?;
    let simulator = Simulator::new(sim_config)?;
    let generated = simulator.generate(replicate)?;
    create_dir(&dir)?;
    write_dataset(&dir.join("multi_source.csv"), &generated.data)?;
    write_external(&dir.join("external.csv"), &generated.external)?;
    let truth = Truth {
        replicate,
        oracle_n,
        oracle_seed,
        source_labels: generated.data.source_labels(),
        em_levels: generated
            .data
            .effect_modifier()
            .map(|e| e.values.levels().to_vec())
            .unwrap_or_default(),
        effects: simulator.true_effects(oracle_n, oracle_seed),
        closed_form_external: simulator.closed_form_external().map(|(ate, ste)| ClosedForm { ate, ste }),
    };
    write_text(&dir.join("truth.json"), &to_json(&truth))?;
    println!("wrote {}", dir.display());
    Ok(())
}
