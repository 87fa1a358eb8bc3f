//! `rdmsim`: command-line front end for the simulation library.
//!
//! Exit status is 0 on success, 1 when a contract is violated (bad flags,
//! malformed scenario, failed precondition) and 2 on a numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod output;
mod scenario;

use output::{write_run, Format};
use scenario::{Module, Request, Resolved};

/// A numeric failure raised by the front end itself (non-finite output,
/// failed invariant suite).
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numeric failure: {}", self.0)
    }
}

impl std::error::Error for NumericFailure {}

#[derive(Debug, Parser)]
#[command(
    name = "rdmsim",
    version,
    about = "Random discontinuous motion, beable, collapse and protective-measurement simulations"
)]
struct Cli {
    /// Scenario file, or a directory whose *.toml files run in name order.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Master seed; overrides the scenario's `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base output directory; each scenario writes into a subdirectory.
    #[arg(long, global = true, env = "RDMSIM_OUT_DIR", default_value = "rdmsim-out")]
    out_dir: PathBuf,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Parameter override `key=value` (TOML value, dotted keys for nesting).
    #[arg(short = 'p', long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample per-instant position stays from |psi|^2.
    RdmSample(Overrides),
    /// Bell-type beable jump ensemble and its equivariance test.
    BeableRun(Overrides),
    /// Collapse trajectories run to an outcome.
    CollapseRun(Overrides),
    /// Ensemble means of P_i and P_i P_j over fixed-length collapse runs.
    CollapseEnsemble(Overrides),
    /// Collapse-time calculator.
    TauC(Overrides),
    /// One Zeno-protected measurement.
    ProtectRun(Overrides),
    /// Protected measurements over a list of projection counts.
    ProtectSweep(Overrides),
    /// Wavefunction reconstruction from region-averaged density and flux.
    Tomography(Overrides),
    /// Frame analysis of stay events.
    FramesAnalyze(Overrides),
    /// Built-in invariant suites.
    Verify(Overrides),
}

impl Command {
    fn split(&self) -> (Module, &[String]) {
        let (m, o) = match self {
            Command::RdmSample(o) => (Module::RdmSample, o),
            Command::BeableRun(o) => (Module::BeableRun, o),
            Command::CollapseRun(o) => (Module::CollapseRun, o),
            Command::CollapseEnsemble(o) => (Module::CollapseEnsemble, o),
            Command::TauC(o) => (Module::TauC, o),
            Command::ProtectRun(o) => (Module::ProtectRun, o),
            Command::ProtectSweep(o) => (Module::ProtectSweep, o),
            Command::Tomography(o) => (Module::Tomography, o),
            Command::FramesAnalyze(o) => (Module::FramesAnalyze, o),
            Command::Verify(o) => (Module::Verify, o),
        };
        (m, &o.params)
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<rdmsim::Error>() {
            return if err.is_numeric() { 2 } else { 1 };
        }
        if cause.is::<NumericFailure>() {
            return 2;
        }
    }
    1
}

fn resolve(cli: &Cli) -> Result<Vec<Resolved>> {
    let (module, overrides) = match &cli.command {
        Some(c) => {
            let (m, o) = c.split();
            (Some(m), o)
        }
        None => (None, &[][..]),
    };
    let req = Request {
        module,
        overrides,
        seed: cli.seed,
    };
    match (&cli.scenario, module) {
        (Some(path), _) => scenario::scenario_paths(path)?
            .iter()
            .map(|p| scenario::load_file(p, &req))
            .collect(),
        (None, Some(m)) => Ok(vec![scenario::from_flags(m, &req)?]),
        (None, None) => anyhow::bail!("give a subcommand or --scenario (see --help)"),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    let scenarios = resolve(cli)?;
    // validate everything before running anything
    let jobs = scenarios
        .iter()
        .map(|s| commands::prepare(s).with_context(|| format!("scenario `{}`", s.name)))
        .collect::<Result<Vec<_>>>()?;
    for (s, job) in scenarios.iter().zip(&jobs) {
        let start = Instant::now();
        let out = job
            .run(s.master_seed)
            .with_context(|| format!("scenario `{}`", s.name))?;
        let dir = cli.out_dir.join(&s.output_dir);
        write_run(&dir, s, &out, cli.format, start.elapsed().as_secs_f64())
            .with_context(|| format!("scenario `{}`", s.name))?;
        println!("{} [{}] {} -> {}", s.name, s.module.name(), out.line, dir.display());
        if let Some(f) = out.failure {
            return Err(NumericFailure(f)).with_context(|| format!("scenario `{}`", s.name));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
