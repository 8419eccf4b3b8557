//! Certificate identity: DER bytes and their SHA-1 thumbprint.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::time::Timestamp;

pub const THUMBPRINT_LEN: usize = 20;

/// SHA-1 digest of a certificate's DER encoding, as carried in OPC UA headers.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Thumbprint(pub [u8; THUMBPRINT_LEN]);

impl Thumbprint {
    pub fn as_bytes(&self) -> &[u8; THUMBPRINT_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Thumbprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Thumbprint({})", self.to_hex())
    }
}

impl fmt::Display for Thumbprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Thumbprint {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|_| CertError::InvalidThumbprintHex(s.to_owned()))?;
        let arr: [u8; THUMBPRINT_LEN] = bytes
            .try_into()
            .map_err(|_| CertError::InvalidThumbprintHex(s.to_owned()))?;
        Ok(Thumbprint(arr))
    }
}

impl Serialize for Thumbprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Thumbprint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertError {
    #[error("certificate is empty")]
    EmptyCertificate,
    #[error("invalid thumbprint hex {0:?}")]
    InvalidThumbprintHex(String),
    #[error("certificate is neither DER nor PEM")]
    Unparseable,
}

pub fn hash_thumbprint(der: &[u8]) -> Result<Thumbprint, CertError> {
    if der.is_empty() {
        return Err(CertError::EmptyCertificate);
    }
    Ok(Thumbprint(Sha1::digest(der).into()))
}

/// A trusted certificate as known to the registry and the controller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateRecord {
    der: Vec<u8>,
    thumbprint: Thumbprint,
    pub expire_date: Option<Timestamp>,
}

impl CertificateRecord {
    pub fn new(der: Vec<u8>, expire_date: Option<Timestamp>) -> Result<Self, CertError> {
        let thumbprint = hash_thumbprint(&der)?;
        Ok(CertificateRecord {
            der,
            thumbprint,
            expire_date,
        })
    }

    pub fn der(&self) -> &[u8] {
        &self.der
    }

    pub fn thumbprint(&self) -> Thumbprint {
        self.thumbprint
    }

    /// Expired records are those whose expiry lies strictly before `clock`.
    pub fn is_expired_at(&self, clock: Timestamp) -> bool {
        self.expire_date.is_some_and(|e| e < clock)
    }
}

/// Accepts DER as-is or converts a PEM `CERTIFICATE` block to DER.
pub fn certificate_from_bytes(bytes: &[u8]) -> Result<Vec<u8>, CertError> {
    if bytes.is_empty() {
        return Err(CertError::EmptyCertificate);
    }
    // DER certificates start with a SEQUENCE tag
    if bytes[0] == 0x30 {
        return Ok(bytes.to_vec());
    }
    let parsed = pem::parse(bytes).map_err(|_| CertError::Unparseable)?;
    if parsed.tag() != "CERTIFICATE" || parsed.contents().is_empty() {
        return Err(CertError::Unparseable);
    }
    Ok(parsed.into_contents())
}

pub fn certificate_to_pem(der: &[u8]) -> String {
    pem::encode(&pem::Pem::new("CERTIFICATE", der.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CERT_A: &[u8] = include_bytes!("../fixtures/cert_a.der");
    const CERT_B: &[u8] = include_bytes!("../fixtures/cert_b.der");

    #[test]
    fn thumbprint_matches_external_digest() {
        // sha1sum fixtures/cert_a.der
        assert_eq!(
            hash_thumbprint(CERT_A).unwrap().to_hex(),
            "7f7b764c758bbf12de4d122a729c8ca22c5e5fcd"
        );
        assert_eq!(
            hash_thumbprint(CERT_B).unwrap().to_hex(),
            "83315b380bfc86e19cc85d0177af8ec93092920d"
        );
    }

    #[test]
    fn thumbprint_is_deterministic_and_sensitive() {
        let a = hash_thumbprint(CERT_A).unwrap();
        assert_eq!(a, hash_thumbprint(CERT_A).unwrap());
        let mut flipped = CERT_A.to_vec();
        flipped[100] ^= 1;
        assert_ne!(a, hash_thumbprint(&flipped).unwrap());
    }

    #[test]
    fn empty_certificate_has_no_thumbprint() {
        assert_eq!(hash_thumbprint(&[]), Err(CertError::EmptyCertificate));
    }

    #[test]
    fn pem_adapter_round_trips() {
        let pem = certificate_to_pem(CERT_A);
        assert!(pem.starts_with("-----BEGIN CERTIFICATE-----"));
        assert_eq!(certificate_from_bytes(pem.as_bytes()).unwrap(), CERT_A);
        assert_eq!(certificate_from_bytes(CERT_A).unwrap(), CERT_A);
        assert_eq!(certificate_from_bytes(b"garbage"), Err(CertError::Unparseable));
    }

    #[test]
    fn thumbprint_hex_parses() {
        let t = hash_thumbprint(CERT_A).unwrap();
        assert_eq!(t.to_hex().parse::<Thumbprint>().unwrap(), t);
        assert!("abc".parse::<Thumbprint>().is_err());
    }
}
