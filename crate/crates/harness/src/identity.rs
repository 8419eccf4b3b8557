//! Endpoint identities: a self-signed X.509 certificate and its Ed25519 key.

use std::fmt;

use ed25519_dalek::pkcs8::EncodePrivateKey;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rcgen::{CertificateParams, DnType, KeyPair, PKCS_ED25519};
use trustgate_core::cert::{hash_thumbprint, Thumbprint};
use x509_parser::prelude::{FromDer, X509Certificate};

use crate::HarnessError;

#[derive(Clone)]
pub struct Identity {
    pub name: String,
    der: Vec<u8>,
    key: SigningKey,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identity({}, {})", self.name, self.thumbprint())
    }
}

impl Identity {
    /// Deterministic for a given name and seed.
    pub fn generate(name: &str, seed: [u8; 32]) -> Result<Self, HarnessError> {
        let key = SigningKey::from_bytes(&seed);
        let der = key
            .to_pkcs8_der()
            .map_err(|e| HarnessError::Setup(format!("key encoding: {e}")))?;
        let pkcs8 = pem::encode(&pem::Pem::new("PRIVATE KEY", der.as_bytes().to_vec()));
        let kp = KeyPair::from_pkcs8_pem_and_sign_algo(&pkcs8, &PKCS_ED25519)
            .map_err(|e| HarnessError::Setup(format!("key import: {e}")))?;
        let mut params = CertificateParams::new(vec![format!("{name}.local")])
            .map_err(|e| HarnessError::Setup(e.to_string()))?;
        params.distinguished_name.push(DnType::CommonName, name);
        params.distinguished_name.push(DnType::OrganizationName, "Plant Floor");
        let cert = params
            .self_signed(&kp)
            .map_err(|e| HarnessError::Setup(format!("certificate: {e}")))?;
        Ok(Identity {
            name: name.to_owned(),
            der: cert.der().to_vec(),
            key,
        })
    }

    /// Same certificate bytes, different private key: what a thief holds.
    pub fn with_stolen_certificate(&self, name: &str, seed: [u8; 32]) -> Self {
        Identity {
            name: name.to_owned(),
            der: self.der.clone(),
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn der(&self) -> &[u8] {
        &self.der
    }

    pub fn thumbprint(&self) -> Thumbprint {
        hash_thumbprint(&self.der).expect("certificate is non-empty")
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.key.sign(msg).to_bytes()
    }
}

/// Checks `sig` against the Ed25519 key inside a DER certificate.
pub fn verify_with_certificate(der: &[u8], msg: &[u8], sig: &[u8]) -> bool {
    let Ok((_, cert)) = X509Certificate::from_der(der) else {
        return false;
    };
    let spki = &cert.tbs_certificate.subject_pki.subject_public_key.data;
    let Ok(pk) = <[u8; 32]>::try_from(spki.as_ref()) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    let Ok(sig) = <[u8; 64]>::try_from(sig) else {
        return false;
    };
    vk.verify(msg, &Signature::from_bytes(&sig)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certificate_carries_the_signing_key() {
        let id = Identity::generate("server", [7; 32]).unwrap();
        assert_eq!(id.der()[0], 0x30);
        let sig = id.sign(b"nonce");
        assert!(verify_with_certificate(id.der(), b"nonce", &sig));
        assert!(!verify_with_certificate(id.der(), b"other", &sig));
        let thief = id.with_stolen_certificate("rogue", [8; 32]);
        assert_eq!(thief.thumbprint(), id.thumbprint());
        assert!(!verify_with_certificate(thief.der(), b"nonce", &thief.sign(b"nonce")));
    }

    #[test]
    fn generation_is_deterministic_per_key() {
        let a = Identity::generate("c", [1; 32]).unwrap();
        let b = Identity::generate("c", [2; 32]).unwrap();
        assert_ne!(a.thumbprint(), b.thumbprint());
    }
}
