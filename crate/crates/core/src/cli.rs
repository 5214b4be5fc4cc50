//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 certificate
//! violation, 4 numerical failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{certify, prepare, run_batch, EngineError, RunConfig, RunOutcome};
use crate::exec::Execution;
use crate::graph::build_regular_tree_graph;
use crate::lyapunov::CertificateRecord;
use crate::report::{
    build_report, read_trajectory_csv, write_certificates_csv, write_certificates_json, write_plot_csv,
    write_trajectory_csv, ReportError,
};
use crate::sets::{regularity_interior, regularity_sampling, ConvexSet, RegionBall, RegularityEstimate, SetError};

pub const LOG_ENV: &str = "CONSENSUS_LAB_LOG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "consensus-lab", version, about = "Consensus runs with per-step Lyapunov certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its artifacts.
    Simulate(SimulateArgs),
    /// Print the 3-regular tree graph on 2^D agents as JSON.
    ConstructGraph { d: u32 },
    /// Estimate the regularity constant of a list of sets.
    EstimateRegularity(RegularityArgs),
    /// Re-run the certificates on a stored trajectory.
    Verify(VerifyArgs),
    /// Run several scenarios concurrently, one output directory each.
    Batch(BatchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub no_certificates: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct RegularityArgs {
    /// JSON array of sets.
    #[arg(long)]
    pub sets: PathBuf,
    #[arg(long)]
    pub radius: f64,
    /// Comma-separated center of the sampling ball (origin by default).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub center: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, requires = "x_bar")]
    pub theta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "theta")]
    pub x_bar: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Stored `certificates.json`; verdicts must match the recomputation.
    #[arg(long)]
    pub certificates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub scenarios: Vec<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        Self { code: e.exit_code(), message: e.to_string() }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::config(e.to_string())
    }
}

impl From<SetError> for CliError {
    fn from(e: SetError) -> Self {
        let code = match e {
            SetError::NoInformativeSamples | SetError::DykstraNotConverged { .. } => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Self { code, message: e.to_string() }
    }
}

fn yes() -> bool {
    true
}

/// Which artifacts `simulate` writes besides the report and adjoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default = "yes")]
    pub certificates: bool,
    #[serde(default = "yes")]
    pub plot: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, trajectory: true, certificates: true, plot: true }
    }
}

/// A scenario file: a run configuration plus optional `output` and
/// `verbosity` keys. Relative output directories resolve against the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub run: RunConfig,
    pub output: OutputSpec,
    pub verbosity: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut value: Value = serde_json::from_str(text)?;
        let obj = value.as_object_mut().ok_or_else(|| CliError::config("scenario must be a JSON object"))?;
        let output = match obj.remove("output") {
            Some(v) => serde_json::from_value(v)?,
            None => OutputSpec::default(),
        };
        let verbosity = match obj.remove("verbosity") {
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(CliError::config("verbosity must be a string")),
            None => None,
        };
        let run = serde_json::from_value(value)?;
        Ok(Self { run, output, verbosity })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_json(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))?;
        if let (Some(dir), Some(parent)) = (&s.output.dir, path.parent()) {
            if dir.is_relative() {
                s.output.dir = Some(parent.join(dir));
            }
        }
        Ok(s)
    }
}

/// Sets up logging once; `CONSENSUS_LAB_LOG` wins over the scenario level.
pub fn init_logging(fallback: Option<&str>) {
    let level = std::env::var(LOG_ENV).ok().or_else(|| fallback.map(str::to_string)).unwrap_or_else(|| "error".into());
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes every artifact of `run` into `dir`.
pub fn write_artifacts(dir: &Path, run: &RunOutcome, output: &OutputSpec) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    let cert = &run.certification;
    write_json(&dir.join("scenario.resolved.json"), &run.prepared.config)?;
    if output.trajectory {
        write_trajectory_csv(create(&dir.join("trajectory.csv"))?, run)?;
    }
    if output.certificates && run.prepared.config.certificates.enabled {
        write_certificates_json(create(&dir.join("certificates.json"))?, &cert.records)?;
        write_certificates_csv(create(&dir.join("certificates.csv"))?, &cert.records)?;
    }
    if output.plot {
        write_plot_csv(create(&dir.join("plot.csv"))?, run)?;
    }
    let mut adj = create(&dir.join("adjoint.csv"))?;
    run.prepared.adjoint.write_csv(&mut adj).map_err(|e| CliError::config(e.to_string()))?;
    adj.flush()?;
    write_json(&dir.join("adjoint.json"), &run.prepared.adjoint.sidecar())?;
    write_json(&dir.join("report.json"), &build_report(run))?;
    Ok(())
}

fn exec_for(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn outcome_code(run: &RunOutcome) -> i32 {
    let cert = &run.certification;
    if cert.all_pass() {
        EXIT_OK
    } else {
        log::error!("{} certificate violation(s)", cert.violations());
        EXIT_VIOLATION
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let scenario = Scenario::load(&args.scenario)?;
    init_logging(scenario.verbosity.as_deref());
    let mut config = scenario.run;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(h) = args.horizon {
        config.horizon = h;
    }
    if args.no_certificates {
        config.certificates.enabled = false;
    }
    let dir = args
        .out
        .clone()
        .or(scenario.output.dir.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set output.dir"))?;
    let exec = exec_for(args.sequential);
    let prepared = prepare(&config)?;
    log::info!("prepared m={} n={} horizon={} level={:?}", config.m, config.n, config.horizon, prepared.compliance.level);
    let trajectory = crate::engine::simulate(&prepared)?;
    let certification = certify(&prepared, &trajectory, exec)?;
    let run = RunOutcome { prepared, trajectory, certification };
    write_artifacts(&dir, &run, &scenario.output)?;
    Ok(outcome_code(&run))
}

pub fn cmd_construct_graph(d: u32, out: &mut dyn Write) -> Result<i32, CliError> {
    let g = build_regular_tree_graph(d).map_err(|e| CliError::config(e.to_string()))?;
    serde_json::to_writer_pretty(&mut *out, &g.to_json())?;
    writeln!(out)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub sampling: RegularityEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior: Option<RegularityEstimate>,
}

pub fn cmd_estimate_regularity(args: &RegularityArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let file = File::open(&args.sets).map_err(|e| CliError::config(format!("{}: {e}", args.sets.display())))?;
    let sets: Vec<ConvexSet> = serde_json::from_reader(BufReader::new(file))?;
    let n = sets.first().ok_or_else(|| CliError::config("no sets"))?.dim();
    let center = args.center.clone().unwrap_or_else(|| vec![0.0; n]);
    if center.len() != n {
        return Err(CliError::config(format!("center has dimension {}, sets have {n}", center.len())));
    }
    let region = RegionBall { center, radius: args.radius };
    let interior = match (args.theta, &args.x_bar) {
        (Some(theta), Some(x_bar)) => Some(regularity_interior(&sets, theta, x_bar, &region)?),
        _ => None,
    };
    let sampling = regularity_sampling(&sets, &region, args.samples, args.seed, Execution::Parallel)?;
    serde_json::to_writer_pretty(&mut *out, &RegularityReport { sampling, interior })?;
    writeln!(out)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub records: usize,
    pub violations: usize,
    /// Whether the recomputed records equal the stored ones, when given.
    pub matches_stored: Option<bool>,
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let scenario = Scenario::load(&args.scenario)?;
    init_logging(scenario.verbosity.as_deref());
    let prepared = prepare(&scenario.run)?;
    let c = &prepared.config;
    let file = File::open(&args.trajectory).map_err(|e| CliError::config(format!("{}: {e}", args.trajectory.display())))?;
    let traj = read_trajectory_csv(BufReader::new(file), c.m, c.n, c.mode)?;
    if traj.x.len() != c.horizon + 1 {
        return Err(CliError::config(format!("trajectory has {} times, scenario horizon is {}", traj.x.len(), c.horizon)));
    }
    let cert = certify(&prepared, &traj, Execution::Parallel).map_err(|e| match e {
        EngineError::DimensionMismatch { .. } => CliError::config(e.to_string()),
        e => e.into(),
    })?;
    let matches_stored = match &args.certificates {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let stored: Vec<CertificateRecord> = serde_json::from_reader(BufReader::new(file))?;
            Some(stored == cert.records)
        }
        None => None,
    };
    let summary = VerifySummary { records: cert.records.len(), violations: cert.violations(), matches_stored };
    serde_json::to_writer_pretty(&mut *out, &summary)?;
    writeln!(out)?;
    if summary.violations > 0 {
        log::error!("{} certificate violation(s) on the stored trajectory", summary.violations);
        return Ok(EXIT_VIOLATION);
    }
    if matches_stored == Some(false) {
        return Err(CliError::config("stored certificates differ from the recomputation"));
    }
    Ok(EXIT_OK)
}

/// Runs every scenario, writing into `out/<file stem>`; returns the worst code.
pub fn cmd_batch(args: &BatchArgs) -> Result<i32, CliError> {
    init_logging(None);
    let mut scenarios = Vec::with_capacity(args.scenarios.len());
    let mut stems = std::collections::BTreeSet::new();
    for path in &args.scenarios {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if !stems.insert(stem.clone()) {
            return Err(CliError::config(format!("duplicate scenario name {stem}")));
        }
        scenarios.push((stem, Scenario::load(path)?));
    }
    let configs: Vec<RunConfig> = scenarios.iter().map(|(_, s)| s.run.clone()).collect();
    let mut worst = EXIT_OK;
    for ((stem, scenario), result) in scenarios.iter().zip(run_batch(&configs, Execution::Parallel)) {
        let code = match result {
            Ok(run) => {
                write_artifacts(&args.out.join(stem), &run, &scenario.output)?;
                outcome_code(&run)
            }
            Err(e) => {
                log::error!("{stem}: {e}");
                e.exit_code()
            }
        };
        worst = worst.max(code);
    }
    Ok(worst)
}

/// Dispatches `cli`, printing errors to stderr; returns the exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::ConstructGraph { d } => cmd_construct_graph(*d, out),
        Command::EstimateRegularity(a) => {
            init_logging(None);
            cmd_estimate_regularity(a, out)
        }
        Command::Verify(a) => cmd_verify(a, out),
        Command::Batch(a) => cmd_batch(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
