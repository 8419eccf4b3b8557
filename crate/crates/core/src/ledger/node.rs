//! A single live ledger node holding both layers, with real-time
//! confirmation driven by filler traffic.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::time::Instant;

use crate::cert::CertificateRecord;
use crate::time::Timestamp;

use super::action::CertificateAction;
use super::feed::{export_tangle, Envelope, Feed, Layer, Subscription};
use super::keys::{AdminKey, AdminKeyring};
use super::netsim::LinkProfile;
use super::registry::{ContractCall, RegistryEvent, RegistryState};
use super::tangle::{Tangle, DEFAULT_CONFIRMATION_K};
use super::transaction::{LedgerTransaction, TxId};
use super::LedgerError;

const FILLER_TAG: &str = "filler";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub confirmation_k: usize,
    /// Filler transactions per second; they approve tips so that
    /// submissions reach the confirmation threshold.
    pub filler_rate: f64,
    /// Extra one-way delay applied to every delivered event.
    pub delivery_link: Option<LinkProfile>,
    pub seed: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            confirmation_k: DEFAULT_CONFIRMATION_K,
            filler_rate: 50.0,
            delivery_link: None,
            seed: 7,
        }
    }
}

struct State {
    tangle: Tangle,
    /// Submitted transactions not yet published, in submission order.
    pending: VecDeque<TxId>,
    registry: RegistryState,
    rng: ChaCha8Rng,
    filler_key: AdminKey,
    filler_nonce: u64,
}

struct Delivery {
    layer: Layer,
    envelope: Envelope,
    confirmed: bool,
}

pub struct LedgerNode {
    state: Mutex<State>,
    l1: Feed,
    l2: Feed,
    delayed: Option<mpsc::UnboundedSender<(Instant, Delivery)>>,
    config: NodeConfig,
}

impl LedgerNode {
    /// Must be called inside a Tokio runtime; background tasks stop when the
    /// last handle is dropped.
    pub fn start(config: NodeConfig, keyring: AdminKeyring) -> Arc<Self> {
        let filler_key = AdminKey::from_seed([0xF1; 32]);
        let genesis_key = AdminKey::from_seed([0xA5; 32]);
        let mut tangle = Tangle::new(config.confirmation_k);
        let genesis = LedgerTransaction::new(&genesis_key, FILLER_TAG, vec![0], vec![], Timestamp::ZERO)
            .expect("genesis is well formed");
        tangle.insert(genesis).expect("empty tangle accepts genesis");

        let (delayed, delayed_rx) = match config.delivery_link {
            Some(_) => {
                let (tx, rx) = mpsc::unbounded_channel();
                (Some(tx), Some(rx))
            }
            None => (None, None),
        };
        let node = Arc::new(LedgerNode {
            state: Mutex::new(State {
                tangle,
                pending: VecDeque::new(),
                registry: RegistryState::new(keyring, Timestamp::now()),
                rng: ChaCha8Rng::seed_from_u64(config.seed),
                filler_key,
                filler_nonce: 0,
            }),
            l1: Feed::new(),
            l2: Feed::new(),
            delayed,
            config,
        });
        if node.config.filler_rate > 0.0 {
            tokio::spawn(filler_loop(Arc::downgrade(&node), node.config.filler_rate));
        }
        if let Some(rx) = delayed_rx {
            tokio::spawn(delivery_loop(Arc::downgrade(&node), rx));
        }
        node
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("ledger state lock")
    }

    pub fn tips(&self) -> Result<(TxId, TxId), LedgerError> {
        let mut st = self.lock();
        let State { tangle, rng, .. } = &mut *st;
        tangle.select_tips(rng)
    }

    /// Inserts a signed transaction. Any valid signature is recorded; who
    /// may change trust is decided by subscribers.
    pub fn submit_l1(&self, tx: LedgerTransaction) -> Result<TxId, LedgerError> {
        let id = tx.id;
        let filler = tx.tag == FILLER_TAG;
        let mut ready = Vec::new();
        {
            let mut st = self.lock();
            st.tangle.insert(tx)?;
            if !filler {
                st.pending.push_back(id);
            }
            drain_confirmed(&mut st, &mut ready);
        }
        self.deliver_l1(ready);
        Ok(id)
    }

    /// Approves two current tips and submits, as a client library would.
    pub fn submit_action(&self, key: &AdminKey, tag: &str, action: &CertificateAction) -> Result<TxId, LedgerError> {
        let payload = action.encode()?;
        let (a, b) = self.tips()?;
        let tx = LedgerTransaction::new(key, tag, payload, vec![a, b], Timestamp::now())?;
        self.submit_l1(tx)
    }

    pub fn call_l2(&self, call: ContractCall) -> Result<RegistryEvent, LedgerError> {
        let event = {
            let mut st = self.lock();
            st.registry.advance_clock(Timestamp::now());
            st.registry.execute(&call)?
        };
        self.deliver(Layer::L2, Envelope::L2(call), true);
        Ok(event)
    }

    pub fn get_all_certificates(&self) -> Vec<CertificateRecord> {
        let mut st = self.lock();
        st.registry.advance_clock(Timestamp::now());
        st.registry.get_all_certificates()
    }

    pub fn subscribe(&self, layer: Layer, tag: &str, from: u64) -> Subscription {
        match layer {
            Layer::L1 => self.l1.subscribe(tag, from),
            Layer::L2 => self.l2.subscribe(tag, from),
        }
    }

    pub fn is_confirmed(&self, id: &TxId) -> bool {
        self.lock().tangle.is_confirmed(id)
    }

    pub fn tangle(&self) -> Tangle {
        self.lock().tangle.clone()
    }

    pub fn export_l1<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        export_tangle(&self.lock().tangle, out)
    }

    fn issue_filler(&self) -> Result<(), LedgerError> {
        let tx = {
            let mut st = self.lock();
            st.filler_nonce += 1;
            let State { tangle, rng, .. } = &mut *st;
            let (a, b) = tangle.select_tips(rng)?;
            LedgerTransaction::new(
                &st.filler_key,
                FILLER_TAG,
                st.filler_nonce.to_le_bytes().to_vec(),
                vec![a, b],
                Timestamp::now(),
            )?
        };
        self.submit_l1(tx).map(|_| ())
    }

    fn deliver_l1(&self, ready: Vec<LedgerTransaction>) {
        for tx in ready {
            self.deliver(Layer::L1, Envelope::L1(tx), true);
        }
    }

    fn deliver(&self, layer: Layer, envelope: Envelope, confirmed: bool) {
        let item = Delivery {
            layer,
            envelope,
            confirmed,
        };
        match (&self.delayed, self.config.delivery_link) {
            (Some(tx), Some(link)) => {
                let delay = {
                    let mut st = self.lock();
                    link.sample(&mut st.rng)
                };
                let _ = tx.send((Instant::now() + delay, item));
            }
            _ => self.publish(item),
        }
    }

    fn publish(&self, d: Delivery) {
        match d.layer {
            Layer::L1 => self.l1.publish(d.envelope, d.confirmed),
            Layer::L2 => self.l2.publish(d.envelope, d.confirmed),
        };
    }
}

/// Publishes the confirmed prefix of the pending queue so that delivery
/// follows submission order.
fn drain_confirmed(st: &mut State, out: &mut Vec<LedgerTransaction>) {
    st.tangle.confirm_step();
    while let Some(id) = st.pending.front() {
        if !st.tangle.is_confirmed(id) {
            break;
        }
        let id = st.pending.pop_front().expect("front exists");
        if let Some(tx) = st.tangle.get(&id) {
            out.push(tx.clone());
        }
    }
}

async fn filler_loop(node: Weak<LedgerNode>, rate: f64) {
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        let Some(node) = node.upgrade() else { return };
        if let Err(e) = node.issue_filler() {
            tracing::warn!(error = %e, "filler transaction rejected");
        }
    }
}

async fn delivery_loop(node: Weak<LedgerNode>, mut rx: mpsc::UnboundedReceiver<(Instant, Delivery)>) {
    let mut last = Instant::now();
    while let Some((due, item)) = rx.recv().await {
        // FIFO: a later event never overtakes an earlier one
        last = last.max(due);
        tokio::time::sleep_until(last).await;
        let Some(node) = node.upgrade() else { return };
        node.publish(item);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::transaction::DEFAULT_TAG;

    fn admin() -> AdminKey {
        AdminKey::from_seed([3; 32])
    }

    #[tokio::test]
    async fn submission_is_delivered_after_confirmation() {
        let node = LedgerNode::start(NodeConfig::default(), AdminKeyring::new([admin().public()]));
        let mut sub = node.subscribe(Layer::L1, DEFAULT_TAG, 0);
        let action = CertificateAction::issue(b"cert".to_vec(), Timestamp::now() + Duration::from_secs(60));
        let id = node.submit_action(&admin(), DEFAULT_TAG, &action).unwrap();
        let ev = tokio::time::timeout(Duration::from_secs(5), sub.recv()).await.unwrap().unwrap();
        assert!(node.is_confirmed(&id));
        assert_eq!(ev.envelope.action().unwrap(), action);
        assert!(ev.confirmed);
    }

    #[tokio::test]
    async fn delivery_delay_is_applied() {
        let cfg = NodeConfig {
            delivery_link: Some(LinkProfile::new(Duration::from_millis(150), 0.0)),
            ..NodeConfig::default()
        };
        let node = LedgerNode::start(cfg, AdminKeyring::new([admin().public()]));
        let mut sub = node.subscribe(Layer::L2, DEFAULT_TAG, 0);
        let action = CertificateAction::issue(b"cert".to_vec(), Timestamp::now() + Duration::from_secs(60));
        let start = Instant::now();
        node.call_l2(ContractCall::new(&admin(), &action, 1).unwrap()).unwrap();
        sub.recv().await.unwrap();
        assert!(start.elapsed() >= Duration::from_millis(150));
        assert_eq!(node.get_all_certificates().len(), 1);
    }

    #[tokio::test]
    async fn deliveries_follow_submission_order() {
        let node = LedgerNode::start(NodeConfig::default(), AdminKeyring::new([admin().public()]));
        let mut sub = node.subscribe(Layer::L1, DEFAULT_TAG, 0);
        let mut sent = Vec::new();
        for i in 0..10u8 {
            let a = CertificateAction::revoke(vec![0x30, i]);
            sent.push(node.submit_action(&admin(), DEFAULT_TAG, &a).unwrap());
        }
        let mut got = Vec::new();
        while got.len() < sent.len() {
            let ev = tokio::time::timeout(Duration::from_secs(5), sub.recv()).await.unwrap().unwrap();
            if let Envelope::L1(tx) = ev.envelope {
                got.push(tx.id);
            }
        }
        assert_eq!(got, sent);
    }
}
