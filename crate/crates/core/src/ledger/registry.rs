//! The contract-style registry: a replayable set of valid certificates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cert::{CertificateRecord, Thumbprint};
use crate::time::Timestamp;

use super::action::{ActionKind, CertificateAction};
use super::keys::{AdminKey, AdminKeyring, PublicKey};
use super::transaction::b64;
use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractFunction {
    AddCertificate,
    RevokeCertificate,
}

impl ContractFunction {
    pub fn name(self) -> &'static str {
        match self {
            ContractFunction::AddCertificate => "addCertificate",
            ContractFunction::RevokeCertificate => "revokeCertificate",
        }
    }
}

/// A signed invocation of a registry function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractCall {
    pub function: ContractFunction,
    /// Encoded [`CertificateAction`].
    #[serde(with = "b64")]
    pub args: Vec<u8>,
    #[serde(with = "b64")]
    pub caller: [u8; 32],
    pub nonce: u64,
    #[serde(with = "b64")]
    pub signature: [u8; 64],
}

fn call_bytes(function: ContractFunction, args: &[u8], nonce: u64) -> Vec<u8> {
    let name = function.name().as_bytes();
    let mut m = Vec::with_capacity(name.len() + args.len() + 16);
    m.push(name.len() as u8);
    m.extend_from_slice(name);
    m.extend_from_slice(&(args.len() as u32).to_le_bytes());
    m.extend_from_slice(args);
    m.extend_from_slice(&nonce.to_le_bytes());
    m
}

impl ContractCall {
    pub fn new(key: &AdminKey, action: &CertificateAction, nonce: u64) -> Result<Self, LedgerError> {
        let function = match action.kind {
            ActionKind::Issue => ContractFunction::AddCertificate,
            ActionKind::Revoke => ContractFunction::RevokeCertificate,
        };
        let args = action.encode()?;
        let signature = key.sign(&call_bytes(function, &args, nonce));
        Ok(ContractCall {
            function,
            args,
            caller: key.public().0,
            nonce,
            signature,
        })
    }

    pub fn caller(&self) -> PublicKey {
        PublicKey(self.caller)
    }

    pub fn verify_signature(&self) -> bool {
        self.caller()
            .verify(&call_bytes(self.function, &self.args, self.nonce), &self.signature)
    }

    pub fn verify_sender(&self, keyring: &AdminKeyring) -> bool {
        self.verify_signature() && keyring.contains(&self.caller())
    }

    /// The action carried, checked against the function that was called.
    pub fn action(&self) -> Result<CertificateAction, LedgerError> {
        let action = CertificateAction::decode(&self.args)?;
        let expected = match self.function {
            ContractFunction::AddCertificate => ActionKind::Issue,
            ContractFunction::RevokeCertificate => ActionKind::Revoke,
        };
        if action.kind != expected {
            return Err(LedgerError::MalformedPayload("action does not match function"));
        }
        Ok(action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    #[serde(with = "b64")]
    pub der: Vec<u8>,
    pub expire_date: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedAction {
    pub at: Timestamp,
    pub action: CertificateAction,
}

/// Emitted for every successful call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEvent {
    pub kind: ActionKind,
    pub thumbprint: Thumbprint,
    pub expire_date: Option<Timestamp>,
    /// True for a revocation of a certificate that was not valid.
    pub noop: bool,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryState {
    valid: BTreeMap<Thumbprint, RegistryEntry>,
    action_log: Vec<LoggedAction>,
    clock: Timestamp,
    keyring: AdminKeyring,
}

impl RegistryState {
    pub fn new(keyring: AdminKeyring, clock: Timestamp) -> Self {
        RegistryState {
            valid: BTreeMap::new(),
            action_log: Vec::new(),
            clock,
            keyring,
        }
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn keyring(&self) -> &AdminKeyring {
        &self.keyring
    }

    pub fn action_log(&self) -> &[LoggedAction] {
        &self.action_log
    }

    pub fn is_valid(&self, t: &Thumbprint) -> bool {
        self.valid.contains_key(t)
    }

    /// Moves the clock forward and drops entries that expired strictly before it.
    pub fn advance_clock(&mut self, to: Timestamp) -> Vec<Thumbprint> {
        if to > self.clock {
            self.clock = to;
        }
        let clock = self.clock;
        let expired: Vec<Thumbprint> = self
            .valid
            .iter()
            .filter(|(_, e)| e.expire_date < clock)
            .map(|(t, _)| *t)
            .collect();
        for t in &expired {
            self.valid.remove(t);
        }
        expired
    }

    pub fn execute(&mut self, call: &ContractCall) -> Result<RegistryEvent, LedgerError> {
        if !call.verify_sender(&self.keyring) {
            return Err(LedgerError::Unauthorized);
        }
        let action = call.action()?;
        self.apply(action)
    }

    pub fn add_certificate(
        &mut self,
        key: &AdminKey,
        der: Vec<u8>,
        expire_date: Timestamp,
        nonce: u64,
    ) -> Result<RegistryEvent, LedgerError> {
        self.execute(&ContractCall::new(key, &CertificateAction::issue(der, expire_date), nonce)?)
    }

    pub fn revoke_certificate(&mut self, key: &AdminKey, der: Vec<u8>, nonce: u64) -> Result<RegistryEvent, LedgerError> {
        self.execute(&ContractCall::new(key, &CertificateAction::revoke(der), nonce)?)
    }

    fn apply(&mut self, action: CertificateAction) -> Result<RegistryEvent, LedgerError> {
        let thumbprint = action.thumbprint()?;
        let event = match action.kind {
            ActionKind::Issue => {
                let expire = action
                    .expire_date
                    .ok_or(LedgerError::MalformedPayload("issue without expiry"))?;
                if expire < self.clock {
                    return Err(LedgerError::ExpiredAtInsertion {
                        expire,
                        clock: self.clock,
                    });
                }
                self.valid.insert(
                    thumbprint,
                    RegistryEntry {
                        der: action.certificate.clone(),
                        expire_date: expire,
                    },
                );
                RegistryEvent {
                    kind: ActionKind::Issue,
                    thumbprint,
                    expire_date: Some(expire),
                    noop: false,
                    at: self.clock,
                }
            }
            ActionKind::Revoke => {
                let noop = self.valid.remove(&thumbprint).is_none();
                RegistryEvent {
                    kind: ActionKind::Revoke,
                    thumbprint,
                    expire_date: None,
                    noop,
                    at: self.clock,
                }
            }
        };
        self.action_log.push(LoggedAction {
            at: self.clock,
            action,
        });
        Ok(event)
    }

    /// Valid certificates at the current clock, ordered by thumbprint.
    pub fn get_all_certificates(&self) -> Vec<CertificateRecord> {
        self.valid
            .values()
            .filter(|e| e.expire_date >= self.clock)
            .filter_map(|e| CertificateRecord::new(e.der.clone(), Some(e.expire_date)).ok())
            .collect()
    }
}
