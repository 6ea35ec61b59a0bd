//! Command-line front end: configuration, reproductions, data import and
//! export, and plot data.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod units;

pub use commands::Context;
pub use config::{Format, RunConfig};
pub use error::CliError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_OUT_DIR: &str = "ionlock-out";

#[derive(Debug, Parser)]
#[command(
    name = "ionlock",
    version,
    about = "Quantum lock-in force sensing: simulate, fit, reproduce"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Format of written scan files.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Leave the timestamp out of reports so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    pub plot: bool,
}

#[derive(Debug, Args, Default)]
pub struct DriveOverrides {
    /// Force amplitude, e.g. "8.64e-19 N"; replaces the configured drive.
    #[arg(long, value_name = "QUANTITY")]
    pub force: Option<String>,
    /// Shots per analysis phase.
    #[arg(long, value_name = "N")]
    pub shots: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a triggered τ × ξ scan and write it.
    SimulateSync(DriveOverrides),
    /// Simulate a free-running τ scan and write it.
    SimulateAsync(DriveOverrides),
    /// Fit a scan file.
    Fit {
        /// Scan file (.csv or .json).
        data: PathBuf,
        #[arg(long, value_enum)]
        model: commands::Model,
        /// Pulse count for CSV files that do not declare one.
        #[arg(long)]
        pulse_count: Option<u32>,
    },
    /// Triggered phase map: simulate, fit x₀ and the trigger offset.
    ReproduceFig2(DriveOverrides),
    /// Free-running contrast curves for n = 10 and 20: simulate, fit x₀ and f_m.
    ReproduceFig3(DriveOverrides),
    /// Run the oracle and property suites.
    Selftest {
        /// Smaller suites for a fast smoke test.
        #[arg(long)]
        quick: bool,
    },
}

fn apply_overrides(cfg: &mut RunConfig, o: &DriveOverrides) -> Result<(), CliError> {
    if let Some(f) = &o.force {
        let si = units::parse_quantity::<units::Force>(f)
            .map_err(|e| CliError::Config(format!("--force: {e}")))?;
        cfg.drive.force = Some(units::ForceQ::new(si));
        cfg.drive.motion_amplitude = None;
    }
    if let Some(n) = o.shots {
        cfg.scan.shots_per_phase = Some(n);
    }
    Ok(())
}

/// Runs a parsed command line, printing written files to stdout and
/// problems to stderr. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, as in repeated in-process calls.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let ctx = Context {
        out_dir: g
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        format: g.format.or(cfg.output.format).unwrap_or(Format::Csv),
        seed: g.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        timestamp: !g.no_timestamp && cfg.timestamp.unwrap_or(true),
        plot: g.plot || cfg.output.plot.unwrap_or(false),
    };
    match &cli.command {
        Command::SimulateSync(o) => {
            apply_overrides(&mut cfg, o)?;
            commands::simulate_sync(&cfg, &ctx)
        }
        Command::SimulateAsync(o) => {
            apply_overrides(&mut cfg, o)?;
            commands::simulate_async(&cfg, &ctx)
        }
        Command::Fit {
            data,
            model,
            pulse_count,
        } => commands::fit(&cfg, &ctx, data, *model, *pulse_count).map(|r| r.1),
        Command::ReproduceFig2(o) => {
            apply_overrides(&mut cfg, o)?;
            commands::reproduce_fig2(&cfg, &ctx).map(|r| r.1)
        }
        Command::ReproduceFig3(o) => {
            apply_overrides(&mut cfg, o)?;
            commands::reproduce_fig3(&cfg, &ctx).map(|r| r.1)
        }
        Command::Selftest { quick } => {
            commands::selftest(&ctx, *quick, std::io::stdout()).map(|_| Vec::new())
        }
    }
}
