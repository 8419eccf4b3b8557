//! Administrator keys and the keyring of authorized public keys.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::pkcs8::{DecodePrivateKey, EncodePrivateKey};
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use super::LedgerError;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn verify(&self, msg: &[u8], signature: &[u8; 64]) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        vk.verify_strict(msg, &Signature::from_bytes(signature)).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for PublicKey {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|_| LedgerError::InvalidKey)?;
        Ok(PublicKey(bytes.try_into().map_err(|_| LedgerError::InvalidKey)?))
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A signing identity: an administrator or any other ledger participant.
#[derive(Clone)]
pub struct AdminKey {
    key: SigningKey,
}

impl fmt::Debug for AdminKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AdminKey({})", self.public())
    }
}

impl AdminKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        AdminKey {
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.key.sign(msg).to_bytes()
    }

    pub fn to_pem(&self) -> Result<String, LedgerError> {
        let der = self.key.to_pkcs8_der().map_err(|_| LedgerError::SigningFailure)?;
        Ok(pem::encode(&pem::Pem::new("PRIVATE KEY", der.as_bytes().to_vec())))
    }

    pub fn from_pem(text: &str) -> Result<Self, LedgerError> {
        let p = pem::parse(text).map_err(|_| LedgerError::InvalidKey)?;
        if p.tag() != "PRIVATE KEY" {
            return Err(LedgerError::InvalidKey);
        }
        let key = SigningKey::from_pkcs8_der(p.contents()).map_err(|_| LedgerError::InvalidKey)?;
        Ok(AdminKey { key })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminKeyring {
    authorized: BTreeSet<PublicKey>,
}

impl AdminKeyring {
    pub fn new(keys: impl IntoIterator<Item = PublicKey>) -> Self {
        AdminKeyring {
            authorized: keys.into_iter().collect(),
        }
    }

    pub fn contains(&self, k: &PublicKey) -> bool {
        self.authorized.contains(k)
    }

    pub fn insert(&mut self, k: PublicKey) {
        self.authorized.insert(k);
    }

    pub fn is_empty(&self) -> bool {
        self.authorized.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PublicKey> {
        self.authorized.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_and_pem() {
        let k = AdminKey::from_seed([7; 32]);
        let sig = k.sign(b"hello");
        assert!(k.public().verify(b"hello", &sig));
        assert!(!k.public().verify(b"hellp", &sig));
        let back = AdminKey::from_pem(&k.to_pem().unwrap()).unwrap();
        assert_eq!(back.public(), k.public());
        assert_eq!(k.public().to_string().parse::<PublicKey>().unwrap(), k.public());
    }
}
