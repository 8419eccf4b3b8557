//! Tag-filtered event streams shared by both ledger layers.

use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::time::Timestamp;

use super::action::CertificateAction;
use super::keys::AdminKeyring;
use super::registry::ContractCall;
use super::tangle::Tangle;
use super::transaction::{LedgerTransaction, DEFAULT_TAG};
use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    #[default]
    L1,
    L2,
}

impl std::str::FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Layer::L1),
            "l2" => Ok(Layer::L2),
            other => Err(format!("unknown layer {other:?}")),
        }
    }
}

/// What was signed: a tangle transaction or a registry call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "lowercase")]
pub enum Envelope {
    L1(LedgerTransaction),
    L2(ContractCall),
}

impl Envelope {
    pub fn layer(&self) -> Layer {
        match self {
            Envelope::L1(_) => Layer::L1,
            Envelope::L2(_) => Layer::L2,
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            Envelope::L1(tx) => &tx.tag,
            Envelope::L2(_) => DEFAULT_TAG,
        }
    }

    pub fn verify_sender(&self, keyring: &AdminKeyring) -> bool {
        match self {
            Envelope::L1(tx) => tx.verify_sender(keyring),
            Envelope::L2(call) => call.verify_sender(keyring),
        }
    }

    pub fn action(&self) -> Result<CertificateAction, LedgerError> {
        match self {
            Envelope::L1(tx) => CertificateAction::decode(&tx.payload),
            Envelope::L2(call) => call.action(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    /// Position in the layer's stream, starting at 0.
    pub seq: u64,
    pub envelope: Envelope,
    pub confirmed: bool,
    pub delivered_at: Timestamp,
}

pub struct Subscription {
    rx: mpsc::UnboundedReceiver<LedgerEvent>,
}

impl Subscription {
    pub fn new(rx: mpsc::UnboundedReceiver<LedgerEvent>) -> Self {
        Subscription { rx }
    }

    pub async fn recv(&mut self) -> Option<LedgerEvent> {
        self.rx.recv().await
    }

    pub fn try_recv(&mut self) -> Option<LedgerEvent> {
        self.rx.try_recv().ok()
    }
}

struct Subscriber {
    tag: String,
    tx: mpsc::UnboundedSender<LedgerEvent>,
}

#[derive(Default)]
struct FeedInner {
    history: Vec<LedgerEvent>,
    subscribers: Vec<Subscriber>,
}

/// An append-only stream of events with per-subscriber replay. Each
/// subscriber sees every matching event once, in publication order.
#[derive(Default)]
pub struct Feed {
    inner: Mutex<FeedInner>,
}

impl Feed {
    pub fn new() -> Self {
        Feed::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("feed lock").history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn publish(&self, envelope: Envelope, confirmed: bool) -> u64 {
        let mut inner = self.inner.lock().expect("feed lock");
        let event = LedgerEvent {
            seq: inner.history.len() as u64,
            envelope,
            confirmed,
            delivered_at: Timestamp::now(),
        };
        inner.subscribers.retain(|s| {
            if s.tag != event.envelope.tag() {
                return !s.tx.is_closed();
            }
            s.tx.send(event.clone()).is_ok()
        });
        inner.history.push(event.clone());
        event.seq
    }

    /// Replays events with `seq >= from` before following live ones.
    pub fn subscribe(&self, tag: &str, from: u64) -> Subscription {
        let (tx, rx) = mpsc::unbounded_channel();
        let mut inner = self.inner.lock().expect("feed lock");
        for e in inner.history.iter().skip(from as usize) {
            if e.envelope.tag() == tag {
                let _ = tx.send(e.clone());
            }
        }
        inner.subscribers.push(Subscriber { tag: tag.to_owned(), tx });
        Subscription::new(rx)
    }
}

/// One JSON transaction per line, in insertion order.
pub fn export_tangle<W: Write>(tangle: &Tangle, mut out: W) -> std::io::Result<()> {
    for tx in tangle.transactions() {
        serde_json::to_writer(&mut out, tx)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Rejected { line: usize, source: LedgerError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn import_tangle<R: BufRead>(input: R, k: usize) -> Result<Tangle, ImportError> {
    let mut tangle = Tangle::new(k);
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tx: LedgerTransaction =
            serde_json::from_str(&line).map_err(|source| ImportError::Parse { line: i + 1, source })?;
        tangle
            .insert(tx)
            .map_err(|source| ImportError::Rejected { line: i + 1, source })?;
    }
    Ok(tangle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::keys::AdminKey;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn l1(tag: &str, n: u8) -> Envelope {
        let key = AdminKey::from_seed([1; 32]);
        let p = super::super::transaction::TxId([n; 32]);
        Envelope::L1(LedgerTransaction::new(&key, tag, vec![n], vec![p, p], Timestamp(1)).unwrap())
    }

    #[test]
    fn each_subscriber_gets_each_matching_event_once() {
        let feed = Feed::new();
        let mut a = feed.subscribe(DEFAULT_TAG, 0);
        let mut b = feed.subscribe(DEFAULT_TAG, 0);
        feed.publish(l1(DEFAULT_TAG, 1), true);
        feed.publish(l1("other", 2), true);
        for s in [&mut a, &mut b] {
            assert_eq!(s.try_recv().unwrap().seq, 0);
            assert!(s.try_recv().is_none());
        }
    }

    #[test]
    fn late_subscriber_replays_from_cursor() {
        let feed = Feed::new();
        for n in 0..5 {
            feed.publish(l1(DEFAULT_TAG, n), true);
        }
        let mut s = feed.subscribe(DEFAULT_TAG, 3);
        feed.publish(l1(DEFAULT_TAG, 9), true);
        let seqs: Vec<u64> = std::iter::from_fn(|| s.try_recv()).map(|e| e.seq).collect();
        assert_eq!(seqs, vec![3, 4, 5]);
    }

    #[test]
    fn export_import_round_trip() {
        let key = AdminKey::from_seed([5; 32]);
        let mut t = Tangle::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        t.insert(LedgerTransaction::new(&key, "g", vec![0], vec![], Timestamp(0)).unwrap()).unwrap();
        for n in 1..50u64 {
            let (a, b) = t.select_tips(&mut rng).unwrap();
            let tx = LedgerTransaction::new(&key, DEFAULT_TAG, n.to_le_bytes().to_vec(), vec![a, b], Timestamp(n)).unwrap();
            t.insert(tx).unwrap();
        }
        let mut buf = Vec::new();
        export_tangle(&t, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 50);
        let back = import_tangle(&buf[..], 2).unwrap();
        assert!(back.transactions().eq(t.transactions()));
        assert_eq!(back.confirmed_count(), t.confirmed_count());

        let mut broken = buf.clone();
        let pos = broken.iter().position(|&b| b == b'\n').unwrap() + 20;
        broken[pos] = b'!';
        assert!(import_tangle(&broken[..], 2).is_err());
    }
}
