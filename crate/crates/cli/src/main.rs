use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torcont::store::RunStore;
use torcont_cli::commands::{self, DEFAULT_INVARIANCE_TOL};
use torcont_cli::config::LoadedConfig;
use torcont_cli::pipeline::run_config;
use torcont_cli::{exit_code, EXIT_OK};

#[derive(Parser)]
#[command(name = "torcont", version, about = "Continuation of periodic orbits and quasi-periodic tori")]
struct Cli {
    /// Directory holding the run directories.
    #[arg(long, global = true, default_value = "runs")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the stages of a config file.
    Run {
        config: PathBuf,
        /// Execute only the stage with this run id.
        #[arg(long)]
        only: Option<String>,
    },
    /// Check invariance of a stored torus by forward simulation.
    Validate {
        run_id: String,
        label: u32,
        #[arg(long, default_value_t = 20)]
        returns: usize,
        #[arg(long, default_value_t = DEFAULT_INVARIANCE_TOL)]
        tol: f64,
    },
    /// Write a surface grid (torus) or curve (periodic orbit).
    Export {
        run_id: String,
        label: u32,
        #[arg(long, default_value_t = 64)]
        theta2: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write selected monitor columns of a branch table.
    Bd {
        run_id: String,
        /// Comma-separated monitor names.
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List runs, or the labeled points of one run.
    List { run_id: Option<String> },
}

fn output(path: &Option<PathBuf>) -> torcont::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn execute(cli: Cli) -> torcont::Result<()> {
    let store = RunStore::new(&cli.root);
    match cli.command {
        Command::Run { config, only } => {
            let loaded = LoadedConfig::load(&config)?;
            let mut out = output(&None)?;
            run_config(&loaded, &store, only.as_deref(), &mut out)?;
            out.flush()?;
        }
        Command::Validate { run_id, label, returns, tol } => {
            let report = commands::validate(&store, &run_id, label, returns)?;
            let mut out = output(&None)?;
            commands::write_validation(&mut out, &report, tol)?;
            out.flush()?;
        }
        Command::Export { run_id, label, theta2, output: path } => {
            let mut out = output(&path)?;
            commands::export(&store, &run_id, label, theta2, &mut out)?;
            out.flush()?;
        }
        Command::Bd { run_id, columns, output: path } => {
            let mut out = output(&path)?;
            commands::bd(&store, &run_id, &columns, &mut out)?;
            out.flush()?;
        }
        Command::List { run_id } => {
            let mut out = output(&None)?;
            commands::list(&store, run_id.as_deref(), &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
