//! Certificate actions and their canonical payload encoding.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! version:u8 = 1 | flag:u8 (1 issue, 0 revoke) | format:u8 (0 DER, 1 PEM)
//! | len:u32 | certificate bytes | expire_ms:u64 (issue only)
//! ```
//!
//! The certificate is DER inside the process; the PEM format only changes
//! the bytes carried on the ledger.

use serde::{Deserialize, Serialize};

use crate::cert::{certificate_from_bytes, certificate_to_pem, hash_thumbprint, Thumbprint};
use crate::time::Timestamp;

use super::LedgerError;

const PAYLOAD_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Issue,
    Revoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    #[default]
    Der,
    Pem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateAction {
    pub kind: ActionKind,
    /// DER bytes.
    pub certificate: Vec<u8>,
    pub expire_date: Option<Timestamp>,
    pub format: PayloadFormat,
}

impl CertificateAction {
    pub fn issue(der: Vec<u8>, expire_date: Timestamp) -> Self {
        CertificateAction {
            kind: ActionKind::Issue,
            certificate: der,
            expire_date: Some(expire_date),
            format: PayloadFormat::Der,
        }
    }

    pub fn revoke(der: Vec<u8>) -> Self {
        CertificateAction {
            kind: ActionKind::Revoke,
            certificate: der,
            expire_date: None,
            format: PayloadFormat::Der,
        }
    }

    pub fn with_format(mut self, format: PayloadFormat) -> Self {
        self.format = format;
        self
    }

    pub fn thumbprint(&self) -> Result<Thumbprint, LedgerError> {
        hash_thumbprint(&self.certificate).map_err(|_| LedgerError::EmptyPayload)
    }

    pub fn encode(&self) -> Result<Vec<u8>, LedgerError> {
        if self.certificate.is_empty() {
            return Err(LedgerError::EmptyPayload);
        }
        let (flag, expire) = match (self.kind, self.expire_date) {
            (ActionKind::Issue, Some(e)) => (1u8, Some(e)),
            (ActionKind::Revoke, None) => (0u8, None),
            _ => return Err(LedgerError::MalformedPayload("expiry must accompany issue only")),
        };
        let cert = match self.format {
            PayloadFormat::Der => self.certificate.clone(),
            PayloadFormat::Pem => certificate_to_pem(&self.certificate).into_bytes(),
        };
        let len = u32::try_from(cert.len()).map_err(|_| LedgerError::MalformedPayload("certificate too large"))?;
        let mut out = Vec::with_capacity(15 + cert.len());
        out.push(PAYLOAD_VERSION);
        out.push(flag);
        out.push(match self.format {
            PayloadFormat::Der => 0,
            PayloadFormat::Pem => 1,
        });
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&cert);
        if let Some(e) = expire {
            out.extend_from_slice(&e.as_millis().to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LedgerError> {
        let malformed = LedgerError::MalformedPayload;
        let (&version, rest) = bytes.split_first().ok_or(malformed("empty"))?;
        if version != PAYLOAD_VERSION {
            return Err(malformed("unknown version"));
        }
        let [flag, format, l0, l1, l2, l3, rest @ ..] = rest else {
            return Err(malformed("short header"));
        };
        let len = u32::from_le_bytes([*l0, *l1, *l2, *l3]) as usize;
        if rest.len() < len {
            return Err(malformed("certificate truncated"));
        }
        let (cert, tail) = rest.split_at(len);
        let format = match format {
            0 => PayloadFormat::Der,
            1 => PayloadFormat::Pem,
            _ => return Err(malformed("unknown format")),
        };
        let certificate = match format {
            PayloadFormat::Der => cert.to_vec(),
            PayloadFormat::Pem => certificate_from_bytes(cert).map_err(|_| malformed("bad PEM"))?,
        };
        if certificate.is_empty() {
            return Err(LedgerError::EmptyPayload);
        }
        let (kind, expire_date) = match (flag, tail.len()) {
            (1, 8) => {
                let mut b = [0u8; 8];
                b.copy_from_slice(tail);
                (ActionKind::Issue, Some(Timestamp(u64::from_le_bytes(b))))
            }
            (0, 0) => (ActionKind::Revoke, None),
            _ => return Err(malformed("bad flag or trailer")),
        };
        Ok(CertificateAction {
            kind,
            certificate,
            expire_date,
            format,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_fixed() {
        let a = CertificateAction::issue(vec![0x30, 1, 2], Timestamp(0x0102));
        assert_eq!(
            a.encode().unwrap(),
            vec![1, 1, 0, 3, 0, 0, 0, 0x30, 1, 2, 2, 1, 0, 0, 0, 0, 0, 0]
        );
        let r = CertificateAction::revoke(vec![0x30]);
        assert_eq!(r.encode().unwrap(), vec![1, 0, 0, 1, 0, 0, 0, 0x30]);
    }

    #[test]
    fn pem_payload_is_larger_but_decodes_to_der() {
        let der = include_bytes!("../../fixtures/cert_a.der").to_vec();
        let a = CertificateAction::issue(der.clone(), Timestamp(5)).with_format(PayloadFormat::Pem);
        let enc = a.encode().unwrap();
        assert!(enc.len() > der.len() + 15);
        let back = CertificateAction::decode(&enc).unwrap();
        assert_eq!(back.certificate, der);
        assert_eq!(back, a);
    }

    #[test]
    fn empty_and_inconsistent_actions_are_rejected() {
        assert_eq!(CertificateAction::revoke(vec![]).encode(), Err(LedgerError::EmptyPayload));
        let mut bad = CertificateAction::revoke(vec![1]);
        bad.expire_date = Some(Timestamp(1));
        assert!(bad.encode().is_err());
        assert!(CertificateAction::decode(&[]).is_err());
        assert!(CertificateAction::decode(&[1, 1, 0, 9, 0, 0, 0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(cert in proptest::collection::vec(any::<u8>(), 1..300), issue: bool, exp: u64) {
            let a = if issue {
                CertificateAction::issue(cert, Timestamp(exp))
            } else {
                CertificateAction::revoke(cert)
            };
            prop_assert_eq!(CertificateAction::decode(&a.encode().unwrap()).unwrap(), a);
        }

        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = CertificateAction::decode(&bytes);
        }
    }
}
