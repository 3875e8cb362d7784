//! `cgtns`: batch front end for CGTNS optimizations and exact oracles.
//!
//! Exit codes: 0 success, 2 configuration error, 3 capacity exceeded,
//! 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use cgtns::correlators::AnsatzKind;

use config::{parse_window, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "cgtns", version, about = "Complete-graph tensor network states with spin adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Ansatz label: 2s, 2s/si, 3s, 3s/si, 3s[2s], 3s/si[2s], 3s+[2s],
    /// 3s/si+[2s], 3s[2s]sel, 3s+[2s]sel.
    #[arg(long, global = true, value_name = "KIND")]
    ansatz: Option<String>,

    /// Natural-occupation window of sel ansätze.
    #[arg(long, global = true, value_name = "LO,HI")]
    window: Option<String>,

    /// Relative CSF screening threshold.
    #[arg(long, global = true, value_name = "X")]
    screen: Option<f64>,

    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Exact ground state in the determinant and CSF bases.
    Oracle,
    /// Parallel tempering (with seed stage and refinement) for the configured ansatz.
    Run,
    /// Parameter count and reduction against a reference dimension.
    Count {
        /// Ansatz label.
        kind: String,
        /// Number of spin orbitals.
        sites: usize,
        /// Dimension of the reference space.
        reference: u64,
        /// Selected sites of sel ansätze (default: all).
        #[arg(long)]
        selected: Option<usize>,
    },
    /// Energy difference and reduction balance of two completed runs.
    Compare {
        /// Run directory or record file.
        a: PathBuf,
        /// Run directory or record file.
        b: PathBuf,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = &cli.ansatz {
        cfg.ansatz = kind.parse().map_err(|e: cgtns::Error| ConfigError(e.to_string()))?;
    }
    if let Some(window) = &cli.window {
        cfg.window = parse_window(window)?;
    }
    if let Some(screen) = cli.screen {
        if !(0.0..1.0).contains(&screen) {
            return Err(ConfigError(format!("screen: {screen} outside [0, 1)")));
        }
        cfg.screen = screen;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    match &cli.command {
        Command::Oracle => {
            commands::oracle(&cfg, cli.out.as_deref())?;
        }
        Command::Run => {
            commands::run(&cfg)?;
        }
        Command::Count {
            kind,
            sites,
            reference,
            selected,
        } => {
            let kind: AnsatzKind = kind.parse().map_err(|e: cgtns::Error| ConfigError(e.to_string()))?;
            println!("{}", commands::count(kind, *sites, *reference, *selected)?);
        }
        Command::Compare { a, b } => {
            commands::compare(a, b, cli.out.as_deref())?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<cgtns::Error>() {
            return match e {
                cgtns::Error::Capacity(_) => 3,
                cgtns::Error::DegenerateState(_) | cgtns::Error::EstimatorUndefined { .. } => 4,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
