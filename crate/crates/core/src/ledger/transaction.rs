//! Signed, tagged DAG transactions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::time::Timestamp;

use super::keys::{AdminKey, AdminKeyring, PublicKey};
use super::LedgerError;

pub const DEFAULT_TAG: &str = "certificate";

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub [u8; 32]);

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for TxId {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = hex::decode(s).map_err(|_| LedgerError::MalformedPayload("transaction id"))?;
        Ok(TxId(b.try_into().map_err(|_| LedgerError::MalformedPayload("transaction id"))?))
    }
}

impl Serialize for TxId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TxId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: AsRef<[u8]>>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(v.as_ref()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: TryFrom<Vec<u8>>>(d: D) -> Result<T, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = STANDARD.decode(s).map_err(serde::de::Error::custom)?;
        T::try_from(bytes).map_err(|_| serde::de::Error::custom("wrong length"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTransaction {
    pub id: TxId,
    pub tag: String,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    #[serde(with = "b64")]
    pub sender_public_key: [u8; 32],
    #[serde(with = "b64")]
    pub signature: [u8; 64],
    /// Two parents; empty only for genesis.
    pub approvals: Vec<TxId>,
    pub timestamp: Timestamp,
}

fn signing_bytes(tag: &str, payload: &[u8], approvals: &[TxId], timestamp: Timestamp) -> Vec<u8> {
    let mut m = Vec::with_capacity(16 + tag.len() + payload.len() + 32 * approvals.len());
    m.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    m.extend_from_slice(tag.as_bytes());
    m.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    m.extend_from_slice(payload);
    m.push(approvals.len() as u8);
    for a in approvals {
        m.extend_from_slice(&a.0);
    }
    m.extend_from_slice(&timestamp.as_millis().to_le_bytes());
    m
}

fn content_id(signing: &[u8], public: &[u8; 32], signature: &[u8; 64]) -> TxId {
    let mut h = Sha256::new();
    h.update(signing);
    h.update(public);
    h.update(signature);
    TxId(h.finalize().into())
}

impl LedgerTransaction {
    pub fn new(
        key: &AdminKey,
        tag: &str,
        payload: Vec<u8>,
        approvals: Vec<TxId>,
        timestamp: Timestamp,
    ) -> Result<Self, LedgerError> {
        if payload.is_empty() {
            return Err(LedgerError::EmptyPayload);
        }
        if approvals.len() > u8::MAX as usize || tag.len() > u32::MAX as usize {
            return Err(LedgerError::SigningFailure);
        }
        let msg = signing_bytes(tag, &payload, &approvals, timestamp);
        let signature = key.sign(&msg);
        let sender_public_key = key.public().0;
        Ok(LedgerTransaction {
            id: content_id(&msg, &sender_public_key, &signature),
            tag: tag.to_owned(),
            payload,
            sender_public_key,
            signature,
            approvals,
            timestamp,
        })
    }

    pub fn sender(&self) -> PublicKey {
        PublicKey(self.sender_public_key)
    }

    /// Signature is valid and the id matches the content.
    pub fn verify_signature(&self) -> bool {
        let msg = signing_bytes(&self.tag, &self.payload, &self.approvals, self.timestamp);
        self.id == content_id(&msg, &self.sender_public_key, &self.signature)
            && self.sender().verify(&msg, &self.signature)
    }

    pub fn verify_sender(&self, keyring: &AdminKeyring) -> bool {
        self.verify_signature() && keyring.contains(&self.sender())
    }

    pub fn is_genesis(&self) -> bool {
        self.approvals.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_sender_contract() {
        let admin = AdminKey::from_seed([1; 32]);
        let other = AdminKey::from_seed([2; 32]);
        let ring = AdminKeyring::new([admin.public()]);
        let parent = TxId([0; 32]);

        let tx = LedgerTransaction::new(&admin, DEFAULT_TAG, vec![1, 2, 3], vec![parent, parent], Timestamp(10)).unwrap();
        assert!(tx.verify_sender(&ring));

        let foreign = LedgerTransaction::new(&other, DEFAULT_TAG, vec![1, 2, 3], vec![parent, parent], Timestamp(10)).unwrap();
        assert!(foreign.verify_signature());
        assert!(!foreign.verify_sender(&ring));

        let mut tampered = tx.clone();
        tampered.payload[0] ^= 1;
        assert!(!tampered.verify_sender(&ring));

        let mut moved = tx.clone();
        moved.approvals[1] = TxId([9; 32]);
        assert!(!moved.verify_sender(&ring));
    }

    #[test]
    fn empty_payload_is_rejected() {
        let admin = AdminKey::from_seed([1; 32]);
        assert_eq!(
            LedgerTransaction::new(&admin, DEFAULT_TAG, vec![], vec![], Timestamp(0)),
            Err(LedgerError::EmptyPayload)
        );
    }

    #[test]
    fn json_line_round_trip() {
        let admin = AdminKey::from_seed([1; 32]);
        let tx = LedgerTransaction::new(&admin, "x", vec![0xFF; 40], vec![], Timestamp(3)).unwrap();
        let line = serde_json::to_string(&tx).unwrap();
        assert!(!line.contains('\n'));
        let back: LedgerTransaction = serde_json::from_str(&line).unwrap();
        assert_eq!(back, tx);
        assert!(back.verify_signature());
    }
}
