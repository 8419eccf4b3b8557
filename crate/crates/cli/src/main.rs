//! `trustgate`: run the gateway, administer trust, benchmark, replay captures.

mod admin;
mod bench;
mod gateway;
mod replay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use trustgate_core::config::Config;

pub const ADMIN_KEY_ENV: &str = "TRUSTGATE_ADMIN_KEY";

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Exit code 1.
    #[error("{0}")]
    Operational(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Operational(_) => 1,
        }
    }
}

pub fn op<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Operational(e.to_string())
}

pub fn cfg<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

pub fn load_config(path: Option<&PathBuf>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p).map_err(cfg),
        None => Ok(Config::default()),
    }
}

pub fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(op)
}

#[derive(Debug, Parser)]
#[command(name = "trustgate", version, about = "Ledger-backed certificate gateway for OPC UA")]
struct Cli {
    /// Log filter, e.g. `info` or `trustgate_core=debug`.
    #[arg(long, global = true, env = "TRUSTGATE_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the gateway.
    Gateway {
        #[command(subcommand)]
        command: gateway::GatewayCommand,
    },
    /// Administrator actions on the ledger.
    Admin {
        #[command(subcommand)]
        command: admin::AdminCommand,
    },
    /// Measurement campaigns.
    Bench {
        #[command(subcommand)]
        command: bench::BenchCommand,
    },
    /// Run a capture file through the pipeline offline.
    Replay(replay::ReplayArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Gateway { command } => gateway::run(command),
        Command::Admin { command } => admin::run(command),
        Command::Bench { command } => bench::run(command),
        Command::Replay(args) => replay::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trustgate: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
