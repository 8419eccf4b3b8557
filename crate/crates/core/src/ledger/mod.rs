//! Distributed ledger side: signed certificate actions carried either as
//! tangle transactions (L1) or as registry contract calls (L2).

use thiserror::Error;

use crate::time::Timestamp;

pub mod action;
pub mod feed;
pub mod keys;
pub mod netsim;
pub mod node;
pub mod registry;
pub mod tangle;
pub mod transaction;
pub mod wire;

pub use action::{ActionKind, CertificateAction, PayloadFormat};
pub use feed::{export_tangle, import_tangle, Envelope, Feed, ImportError, Layer, LedgerEvent, Subscription};
pub use keys::{AdminKey, AdminKeyring, PublicKey};
pub use netsim::{simulate_l1, simulate_l2, DistancePreset, L1Params, L1Trial, L2Params, LinkProfile};
pub use node::{LedgerNode, NodeConfig};
pub use registry::{ContractCall, ContractFunction, RegistryEntry, RegistryEvent, RegistryState};
pub use tangle::{Tangle, DEFAULT_CONFIRMATION_K};
pub use transaction::{LedgerTransaction, TxId, DEFAULT_TAG};
pub use wire::{LedgerClient, WireError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("empty payload")]
    EmptyPayload,
    #[error("malformed payload: {0}")]
    MalformedPayload(&'static str),
    #[error("invalid key material")]
    InvalidKey,
    #[error("signing failed")]
    SigningFailure,
    #[error("tangle has no tips")]
    EmptyTangle,
    #[error("duplicate transaction {0}")]
    Duplicate(TxId),
    #[error("signature or id does not verify")]
    InvalidSignature,
    #[error("invalid approvals: {0}")]
    InvalidApprovals(&'static str),
    #[error("unknown parent {0}")]
    UnknownParent(TxId),
    #[error("sender is not an authorized administrator")]
    Unauthorized,
    #[error("certificate expires at {expire}, before ledger clock {clock}")]
    ExpiredAtInsertion { expire: Timestamp, clock: Timestamp },
}
