use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asncfl_cli::commands::{cmd_pretrain, cmd_report, cmd_run, cmd_simulate, render_tables};
use asncfl_cli::{CliError, RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(name = "asncfl", version, about = "Cluster microphone nodes by dominant source with unsupervised federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and $ASNCFL_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the autoencoder on a synthetic corpus and write a checkpoint.
    Pretrain(Common),
    /// Write scenario files.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of scenarios; defaults to `scenarios` from the config.
        #[arg(short, long)]
        n: Option<usize>,
    },
    /// Cluster and score every scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario file or directory of scenario files.
        #[arg(long)]
        scenarios: PathBuf,
        /// Scenarios processed concurrently.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Check the inputs and write nothing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print the tables of a results directory and write plot-ready CSVs.
    Report {
        /// Results directory written by `run`.
        dir: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut c = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUT_ENV) {
        c.out = PathBuf::from(dir);
    }
    if let Some(dir) = &common.out {
        c.out = dir.clone();
    }
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain(common) => {
            let c = load_config(&common)?;
            let path = cmd_pretrain(&c)?;
            println!("checkpoint written to {}", show(&path));
        }
        Command::Simulate { common, n } => {
            let c = load_config(&common)?;
            let files = cmd_simulate(&c, n.unwrap_or(c.scenarios))?;
            println!("{} scenario files written", files.len());
        }
        Command::Run {
            common,
            checkpoint,
            scenarios,
            workers,
            dry_run,
        } => {
            let c = load_config(&common)?;
            let summary = cmd_run(&c, &checkpoint, &scenarios, workers, dry_run)?;
            if dry_run {
                println!("inputs are valid");
            } else {
                print!("{}", render_tables(&summary));
            }
        }
        Command::Report { dir } => print!("{}", cmd_report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
