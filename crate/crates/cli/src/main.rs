mod bundle;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orbit_mpc::config::RunConfig;
use orbit_mpc::Error;

use commands::{CheckOutcome, Run};

/// Design and closed-loop tooling for the orbit feedback MPC.
#[derive(Parser)]
#[command(name = "orbit-mpc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the offline design bundle.
    Design(Common),
    /// Closed-loop runs of every controller on one disturbance.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Per-stage timing for 1..=workers solver threads.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Validate a bundle against its configuration.
    Check {
        #[command(flatten)]
        common: Common,
        /// Defaults to `--out` or `output_dir`.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 2,
        Error::Dimension(_) => 3,
        _ => 1,
    }
}

fn prepare(c: &Common) -> Result<Run, Error> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.n_workers = w;
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Run {
        config: c.config.clone(),
        cfg,
        out,
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Design(c) => commands::design(&prepare(&c)?).map(|_| 0),
        Cmd::Simulate { common, bundle } => commands::simulate_cmd(&prepare(&common)?, bundle.as_deref()).map(|_| 0),
        Cmd::Bench { common, bundle } => {
            let run = prepare(&common)?;
            let max = run.cfg.n_workers;
            commands::bench(&run, bundle.as_deref(), max).map(|_| 0)
        }
        Cmd::Check { common, bundle } => {
            let run = prepare(&common)?;
            let dir = bundle.unwrap_or_else(|| run.out.clone());
            Ok(match commands::check(&run, &dir)? {
                CheckOutcome::Pass => 0,
                CheckOutcome::Failed => 1,
                CheckOutcome::Inconsistent => 3,
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
