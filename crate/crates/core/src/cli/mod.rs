//! Command-line front end: dataset and result files, configuration, and the
//! `simulate`, `slam`, `eval` and `mc` workflows.
//!
//! Settings are resolved as built-in defaults, then the `--config` file, then
//! `--param` / `--scenario-param` flags, each overriding the previous.
//! Exit codes: 0 success, 2 usage error, 3 data or I/O error, 4 numerical failure.

pub mod config;
pub mod dataset;
pub mod results;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector2;
use serde::Serialize;

use crate::eval::{aligned_rmse, dead_reckon, filter_params_for, monte_carlo, write_mc_csv, McConfig, SweepParam};
use crate::params::SlamParams;
use crate::simworld::{simulate, ScenarioSpec};
use crate::slam::{LoopDecision, SlamError, SlamSession};
use config::ConfigFile;
use dataset::{read_dataset, write_dataset, Dataset, TruePose};
use results::{read_trajectory_positions, write_results, write_snapshots, Snapshot, StepWeights, SNAPSHOTS_FILE};

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<SlamError> for CliError {
    fn from(e: SlamError) -> Self {
        match e {
            SlamError::Numerical { .. } => CliError::Numerical(e.to_string()),
            SlamError::Params(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "magslam", version, about = "Magnetic-field SLAM with loop-closure detection and RTS smoothing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Run SLAM on a dataset and write trajectory, events and landmarks.
    Slam(SlamArgs),
    /// Compare a SLAM trajectory with the ground truth of a dataset.
    Eval(EvalArgs),
    /// Monte Carlo sweep over odometry quality.
    Mc(McArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file with [slam], [scenario] and [mc] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Filter parameter override, e.g. `--param sigma_lc=0.3`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Scenario parameter override, e.g. `--scenario-param laps=2`.
    #[arg(long = "scenario-param", value_name = "KEY=VALUE")]
    pub scenario_params: Vec<String>,
    /// Write a JSON run summary to this path (`-` for standard output).
    #[arg(long, value_name = "PATH")]
    pub json_summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output dataset CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Omit the ground-truth columns.
    #[arg(long)]
    pub no_truth: bool,
}

#[derive(Debug, Args)]
pub struct SlamArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input dataset CSV.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Directory for the result files.
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Also write per-step detection weights.
    #[arg(long)]
    pub weights: bool,
    /// Also write the smoothed positions after every accepted loop closure.
    #[arg(long)]
    pub snapshots: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result directory or trajectory CSV written by `slam`.
    #[arg(long)]
    pub results: PathBuf,
    /// Dataset CSV with ground-truth columns.
    #[arg(long)]
    pub truth: PathBuf,
    /// Write a JSON summary to this path (`-` for standard output).
    #[arg(long, value_name = "PATH")]
    pub json_summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Per-run results CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-value summary CSV (median and quartiles).
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
    /// Swept quantity: bias | pos-noise-var | gyro-noise-var.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Runs per sweep value.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Master seed for the per-run noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn split_kv(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got '{s}'")))
}

fn load_config(common: &CommonArgs) -> Result<ConfigFile, CliError> {
    match &common.config {
        Some(path) => ConfigFile::load(path).map_err(|e| match e {
            config::ConfigError::Io { .. } => data_err(e),
            _ => usage_err(e),
        }),
        None => Ok(ConfigFile::default()),
    }
}

fn resolve_params(common: &CommonArgs, cfg: &ConfigFile) -> Result<SlamParams, CliError> {
    let mut params = SlamParams::default();
    cfg.apply_slam(&mut params).map_err(usage_err)?;
    for kv in &common.params {
        let (k, v) = split_kv(kv)?;
        params.set(k, v).map_err(usage_err)?;
    }
    params.validate().map_err(usage_err)
}

fn resolve_scenario(common: &CommonArgs, cfg: &ConfigFile) -> Result<ScenarioSpec, CliError> {
    let mut spec = ScenarioSpec::default();
    cfg.apply_scenario(&mut spec).map_err(usage_err)?;
    for kv in &common.scenario_params {
        let (k, v) = split_kv(kv)?;
        spec.set(k, v).map_err(usage_err)?;
    }
    spec.validate().map_err(usage_err)?;
    Ok(spec)
}

fn emit_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        writeln!(out, "{text}").map_err(data_err)
    } else {
        std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Slam(args) => cmd_slam(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Mc(args) => cmd_mc(&args),
    }
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    samples: usize,
    trajectory: &'a str,
    laps: usize,
    seed: u64,
    anomalies: usize,
    odom_rmse_m: Option<f64>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let spec = resolve_scenario(&args.common, &cfg)?;
    let run = simulate(&spec).map_err(usage_err)?;
    let n = run.samples.len();
    let truth = (!args.no_truth).then(|| {
        (0..n).map(|t| TruePose { position: run.truth.positions[t], heading: run.truth.headings[t] }).collect()
    });
    let dataset = Dataset { rate_hz: Some(spec.rate_hz), samples: run.samples, truth };
    let file = std::fs::File::create(&args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    write_dataset(&dataset, file).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    if let Some(path) = &args.common.json_summary {
        let odom = dead_reckon(&dataset.samples);
        let summary = SimulateSummary {
            samples: n,
            trajectory: spec.trajectory.kind(),
            laps: spec.laps,
            seed: spec.seed,
            anomalies: run.field.centers.len(),
            odom_rmse_m: aligned_rmse(&odom, &run.truth.positions).ok(),
        };
        emit_json(path, &summary)?;
    }
    Ok(())
}

fn truth_positions(truth: &[TruePose]) -> Vec<Vector2<f64>> {
    truth.iter().map(|g| g.position).collect()
}

/// RMSE after rigid alignment over the poses that have ground truth.
fn rmse_against(estimate: &[Vector2<f64>], truth: &[Vector2<f64>]) -> Result<f64, CliError> {
    if estimate.len() < truth.len() {
        return Err(CliError::Data(format!(
            "trajectory has {} poses but the ground truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    aligned_rmse(&estimate[..truth.len()], truth).map_err(data_err)
}

#[derive(Serialize)]
struct SlamSummary<'a> {
    samples: usize,
    loop_closures: usize,
    rejected_candidates: usize,
    runtime_s: f64,
    slam_rmse_m: Option<f64>,
    odom_rmse_m: Option<f64>,
    params: &'a SlamParams,
}

fn cmd_slam(args: &SlamArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let params = resolve_params(&args.common, &cfg)?;
    let dataset = read_dataset(&args.input).map_err(data_err)?;

    let start = Instant::now();
    let mut session = SlamSession::new(params.clone())?;
    let mut weights = Vec::new();
    let mut snapshots = Vec::new();
    let mut rejected = 0;
    for sample in &dataset.samples {
        session.ingest(*sample)?;
        let decision = session.try_close_loop()?;
        if args.weights {
            if let Some(row) = session.last_weights() {
                weights.push(StepWeights::from(row));
            }
        }
        match decision {
            LoopDecision::Accepted { event, .. } if args.snapshots => snapshots
                .push(Snapshot { landmark_index: event.landmark_index, positions: session.positions().to_vec() }),
            LoopDecision::Rejected { .. } | LoopDecision::Failed { .. } => rejected += 1,
            _ => {}
        }
        session.advance()?;
    }
    let trajectory = session.finish();
    let runtime_s = start.elapsed().as_secs_f64();

    write_results(&trajectory, args.weights.then_some(weights.as_slice()), &args.out_dir).map_err(data_err)?;
    if args.snapshots {
        write_snapshots(&snapshots, &args.out_dir.join(SNAPSHOTS_FILE)).map_err(data_err)?;
    }
    if let Some(path) = &args.common.json_summary {
        let truth = dataset.truth.as_deref().map(truth_positions);
        let slam_rmse_m = truth.as_ref().map(|g| rmse_against(&trajectory.positions(), g)).transpose()?;
        let odom_rmse_m = truth.as_ref().map(|g| rmse_against(&dead_reckon(&dataset.samples), g)).transpose()?;
        let summary = SlamSummary {
            samples: dataset.samples.len(),
            loop_closures: trajectory.events.len(),
            rejected_candidates: rejected,
            runtime_s,
            slam_rmse_m,
            odom_rmse_m,
            params: &params,
        };
        emit_json(path, &summary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    poses: usize,
    slam_rmse_m: f64,
    odom_rmse_m: f64,
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let trajectory_path =
        if args.results.is_dir() { args.results.join(results::TRAJECTORY_FILE) } else { args.results.clone() };
    let estimate = read_trajectory_positions(&trajectory_path).map_err(data_err)?;
    let dataset = read_dataset(&args.truth).map_err(data_err)?;
    let truth = dataset
        .truth
        .as_deref()
        .map(truth_positions)
        .ok_or_else(|| CliError::Data(format!("{}: no ground-truth columns", args.truth.display())))?;
    let summary = EvalSummary {
        poses: truth.len(),
        slam_rmse_m: rmse_against(&estimate, &truth)?,
        odom_rmse_m: rmse_against(&dead_reckon(&dataset.samples), &truth)?,
    };
    println!("slam_rmse_m {}", fmt_f64(summary.slam_rmse_m));
    println!("odom_rmse_m {}", fmt_f64(summary.odom_rmse_m));
    if let Some(path) = &args.json_summary {
        emit_json(path, &summary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct McValueSummary {
    sweep_value: f64,
    slam_median_m: f64,
    slam_q25_m: f64,
    slam_q75_m: f64,
    odom_median_m: f64,
    failures: usize,
}

#[derive(Serialize)]
struct McJson<'a> {
    sweep: &'a str,
    runs_per_value: usize,
    seed: u64,
    runtime_s: f64,
    summaries: Vec<McValueSummary>,
    params: &'a SlamParams,
}

fn cmd_mc(args: &McArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let params = resolve_params(&args.common, &cfg)?;
    let scenario = resolve_scenario(&args.common, &cfg)?;
    let sweep_name = args.sweep.clone().or(cfg.mc.sweep.clone()).unwrap_or_else(|| "bias".into());
    let sweep: SweepParam = sweep_name.parse().map_err(CliError::Usage)?;
    let config = McConfig {
        sweep,
        values: args.values.clone().or(cfg.mc.values.clone()).unwrap_or_else(|| vec![0.0, 0.005, 0.01]),
        runs: args.runs.or(cfg.mc.runs).unwrap_or(20),
        scenario,
        params,
        seed: args.seed.or(cfg.mc.seed).unwrap_or(1),
    };
    config.validate().map_err(usage_err)?;

    let start = Instant::now();
    let report = monte_carlo(&config).map_err(data_err)?;
    let runtime_s = start.elapsed().as_secs_f64();

    let file = std::fs::File::create(&args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    write_mc_csv(&report, file).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    if let Some(path) = &args.summary {
        write_summary_csv(&report.summaries, path)?;
    }
    if let Some(path) = &args.common.json_summary {
        let summaries = report
            .summaries
            .iter()
            .map(|s| McValueSummary {
                sweep_value: s.sweep_value,
                slam_median_m: s.slam_median,
                slam_q25_m: s.slam_q25,
                slam_q75_m: s.slam_q75,
                odom_median_m: s.odom_median,
                failures: s.failures,
            })
            .collect();
        let json = McJson {
            sweep: sweep.name(),
            runs_per_value: config.runs,
            seed: config.seed,
            runtime_s,
            summaries,
            params: &filter_params_for(&config.scenario, &config.params),
        };
        emit_json(path, &json)?;
    }
    Ok(())
}

fn write_summary_csv(summaries: &[crate::eval::McSummary], path: &Path) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["sweep_value", "slam_median_m", "slam_q25_m", "slam_q75_m", "odom_median_m", "failures"])
        .map_err(err)?;
    for s in summaries {
        w.write_record([
            fmt_f64(s.sweep_value),
            fmt_f64(s.slam_median),
            fmt_f64(s.slam_q25),
            fmt_f64(s.slam_q75),
            fmt_f64(s.odom_median),
            s.failures.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
