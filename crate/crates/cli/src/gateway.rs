use std::path::PathBuf;

use clap::Subcommand;
use trustgate_core::runtime::{Gateway, GatewayError};

use crate::{load_config, op, runtime, CliError};

#[derive(Debug, Subcommand)]
pub enum GatewayCommand {
    /// Serve until SIGINT or SIGTERM, then flush metrics.
    Run {
        #[arg(long, short)]
        config: PathBuf,
    },
}

pub fn run(cmd: GatewayCommand) -> Result<(), CliError> {
    let GatewayCommand::Run { config } = cmd;
    let config = load_config(Some(&config))?;
    runtime()?.block_on(async move {
        let gw = Gateway::start(&config).await.map_err(|e| match e {
            GatewayError::Config(m) => CliError::Config(m),
            other => op(other),
        })?;
        println!("gateway listening on {} -> {}", gw.local_addr(), config.gateway.upstream);
        if gw.ledger.is_some() {
            println!("ledger node listening on {}", gw.ledger_addr);
        }
        println!(
            "validation {}, table capacity {}, controller layer {:?}",
            if config.gateway.validation_enabled { "enabled" } else { "disabled" },
            config.gateway.table_capacity,
            config.controller.layer
        );
        shutdown_signal().await;
        let report = gw.shutdown().map_err(op)?;
        println!("{}", serde_json::to_string(&report).map_err(op)?);
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
