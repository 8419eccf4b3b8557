//! Test endpoints, attack actors and measurement campaigns for the gateway.

pub mod actors;
pub mod bench;
pub mod corpus;
pub mod endpoint;
pub mod identity;
pub mod link;
pub mod report;
pub mod scenarios;
pub mod testbed;

use thiserror::Error;
use trustgate_core::dataplane::TableError;
use trustgate_core::ledger::{LedgerError, WireError};

pub use endpoint::{connect, handshake, ClientConfig, HandshakeResult, Outcome, Phase, ServerConfig, Session};
pub use identity::Identity;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("report: {0}")]
    Report(String),
}
