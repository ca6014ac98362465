use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kmnet_cli::commands::{self, CompareOptions, RunOptions};
use kmnet_cli::config::Overrides;
use kmnet_cli::presets::PRESET_NAMES;
use kmnet_cli::CliError;

/// Distributed Krasnosel'skiĭ–Mann iterations over time-varying networks.
///
/// SCENARIO is either a preset name (paper-dkm-6, paper-dbkm-100,
/// linear-random, dgd-quadratic, dgd-huber) or a path to a TOML scenario file.
#[derive(Parser)]
#[command(name = "kmnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OverrideArgs {
    /// Override run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.max_rounds
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Write full agent states every N rounds to the snapshot companion file
    #[arg(long, value_name = "N")]
    snapshot_cadence: Option<u64>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            max_rounds: a.max_rounds,
            snapshot_cadence: a.snapshot_cadence,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the network, stepsize and operator assumptions
    Validate {
        scenario: String,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the scenario and write a trace file
    Run {
        scenario: String,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Run even if assumption checks fail
        #[arg(long)]
        skip_validate: bool,
        /// Trace path (default: output.trace, else <name>.csv)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the centralized reference solution
    Oracle { scenario: String },
    /// Score a trace against a reference solution
    Compare {
        trace: PathBuf,
        /// Reference point: a file of numbers or an inline list like "-1,2,3"
        #[arg(long, allow_hyphen_values = true)]
        reference: Option<String>,
        /// Scenario providing the stepsize schedule and oracle
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha0: f64,
        #[arg(long, default_value_t = 0.7)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        k0: u64,
        /// Round count for the tail start max_rounds/10 (default: last k in the trace)
        #[arg(long)]
        max_rounds: Option<u64>,
        /// Fail unless the final distance is below this value
        #[arg(long)]
        max_dist: Option<f64>,
        /// Fail unless the fitted consensus rate constant is below this value
        #[arg(long)]
        max_rate: Option<f64>,
    },
    /// Print a scenario as a TOML file
    Show { scenario: String },
    /// List the preset names
    Presets,
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { scenario, overrides } => {
            let mut file = commands::resolve_scenario(&scenario)?;
            file.apply((&overrides).into());
            commands::cmd_validate(&file, out)
        }
        Command::Run {
            scenario,
            overrides,
            skip_validate,
            output,
        } => {
            let mut file = commands::resolve_scenario(&scenario)?;
            file.apply((&overrides).into());
            commands::cmd_run(&file, &RunOptions { skip_validate, output }, out).map(|_| ())
        }
        Command::Oracle { scenario } => commands::cmd_oracle(&commands::resolve_scenario(&scenario)?, out),
        Command::Compare {
            trace,
            reference,
            scenario,
            alpha0,
            gamma,
            k0,
            max_rounds,
            max_dist,
            max_rate,
        } => {
            let opts = CompareOptions {
                reference,
                scenario,
                alpha0,
                gamma,
                k0,
                max_rounds,
                max_dist,
                max_rate,
                ..CompareOptions::new(trace)
            };
            commands::cmd_compare(&opts, out).map(|_| ())
        }
        Command::Show { scenario } => commands::cmd_show(&scenario, out),
        Command::Presets => {
            for name in PRESET_NAMES {
                writeln!(out, "{name}").map_err(|e| CliError::Io(e.to_string()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
