//! `twinforge`: create, design, validate, simulate and adapt vacuum-gripper
//! digital twins from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "twinforge",
    version,
    about = "Multi-fidelity digital twins of a vacuum gripping system",
    after_help = "Set TWINFORGE_LOG (error, warn, info, debug, trace) to control log output.\n\
                  Exit status: 0 success, 1 domain error, 2 usage error or unreadable config."
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// JSON configuration of the subcommand; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts and the run manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Seed for emulator noise; overrides the seed in the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Integration step in seconds; overrides the step in the config.
    #[arg(long, global = true, value_name = "S")]
    pub dt: Option<f64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compose a system graph from the model library into a twin package.
    Create,
    /// Rank the generator catalog on the handling task (selection.csv).
    Design,
    /// Evacuation time and energy over hose inner diameters (sweep.csv).
    Sweep,
    /// Tolerated leak diameter over part weight (boundary.csv).
    Validate,
    /// Simulate behavior models with the controller in the loop.
    Simulate,
    /// Produce a measured plant trace, optionally with a leak ramp.
    Emulate,
    /// Run one adaptation round on an emulated scenario.
    Adapt,
    /// Wall-clock runtime per modeling depth (bench.csv).
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Modeling depths to time.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub depths: Vec<u8>,
    /// Timed runs per depth.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Simulated seconds per run.
    #[arg(long, default_value_t = 9.0)]
    pub horizon: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn domain(e: impl std::fmt::Display) -> Self {
        CliError::Domain(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TWINFORGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    if let Some(dt) = g.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Usage(format!("--dt must be > 0, got {dt}")));
        }
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&g.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", g.out.display())))?;

    let mut run = manifest::Recorder::new(g);
    match &cli.command {
        Command::Create => commands::create(g, &mut run),
        Command::Design => commands::design(g, &mut run),
        Command::Sweep => commands::sweep(g, &mut run),
        Command::Validate => commands::validate(g, &mut run),
        Command::Simulate => commands::simulate(g, &mut run),
        Command::Emulate => commands::emulate(g, &mut run),
        Command::Adapt => commands::adapt(g, &mut run),
        Command::Bench(args) => commands::bench(g, args, &mut run),
    }?;
    run.finish(command_name(&cli.command))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Create => "create",
        Command::Design => "design",
        Command::Sweep => "sweep",
        Command::Validate => "validate",
        Command::Simulate => "simulate",
        Command::Emulate => "emulate",
        Command::Adapt => "adapt",
        Command::Bench(_) => "bench",
    }
}
