//! Keeps the data plane's thumbprint table in step with the ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::cert::{CertificateRecord, Thumbprint};
use crate::dataplane::{TableError, ThumbprintTable};
use crate::ledger::{
    ActionKind, AdminKeyring, Layer, LedgerClient, LedgerEvent, LedgerNode, Subscription, WireError, DEFAULT_TAG,
};
use crate::time::Timestamp;

pub const SNAPSHOT_FORMAT: &str = "trustgate-controller-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("registry unavailable: {0}")]
    RegistryUnavailable(String),
    #[error("snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },
}

/// What applying one ledger event did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", content = "thumbprint", rename_all = "snake_case")]
pub enum EventOutcome {
    Installed(Thumbprint),
    Removed(Thumbprint),
    /// Certificate already expired when the event arrived.
    Expired(Thumbprint),
    /// Queued because the table is full.
    Deferred(Thumbprint),
    Unauthorized,
    Malformed,
    /// Already applied, by sequence number.
    Stale,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncReport {
    pub installed: Vec<Thumbprint>,
    pub removed: Vec<Thumbprint>,
    pub deferred: Vec<Thumbprint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub thumbprint: Thumbprint,
    pub expire: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    pub last_event_id: Option<u64>,
    pub entries: Vec<SnapshotEntry>,
}

impl Snapshot {
    pub fn load(path: &Path) -> Result<Self, ControllerError> {
        let err = |reason: String| ControllerError::Snapshot {
            path: path.to_owned(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(err(format!("unsupported snapshot {} v{}", snap.format, snap.version)));
        }
        Ok(snap)
    }

    /// Written to a sibling file first so a crash never leaves half a snapshot.
    pub fn save(&self, path: &Path) -> Result<(), ControllerError> {
        let err = |reason: String| ControllerError::Snapshot {
            path: path.to_owned(),
            reason,
        };
        let body = serde_json::to_vec_pretty(self).map_err(|e| err(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body).map_err(|e| err(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| err(e.to_string()))
    }
}

pub struct Controller {
    table: Arc<ThumbprintTable>,
    keyring: AdminKeyring,
    known: BTreeMap<Thumbprint, Option<Timestamp>>,
    last_event_id: Option<u64>,
    pending_retries: BTreeMap<Thumbprint, Option<Timestamp>>,
}

impl Controller {
    pub fn new(table: Arc<ThumbprintTable>, keyring: AdminKeyring) -> Self {
        Controller {
            table,
            keyring,
            known: BTreeMap::new(),
            last_event_id: None,
            pending_retries: BTreeMap::new(),
        }
    }

    /// Reinstalls a persisted state, skipping entries that have expired.
    pub fn restore(table: Arc<ThumbprintTable>, keyring: AdminKeyring, snap: &Snapshot, now: Timestamp) -> Self {
        let mut c = Controller::new(table, keyring);
        c.last_event_id = snap.last_event_id;
        for e in &snap.entries {
            if e.expire.is_none_or(|x| x >= now) {
                c.install(e.thumbprint, e.expire);
            }
        }
        c
    }

    pub fn table(&self) -> &Arc<ThumbprintTable> {
        &self.table
    }

    pub fn known(&self) -> impl Iterator<Item = (&Thumbprint, &Option<Timestamp>)> {
        self.known.iter()
    }

    pub fn last_event_id(&self) -> Option<u64> {
        self.last_event_id
    }

    pub fn pending_retries(&self) -> usize {
        self.pending_retries.len()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            last_event_id: self.last_event_id,
            entries: self
                .known
                .iter()
                .map(|(t, e)| SnapshotEntry {
                    thumbprint: *t,
                    expire: *e,
                })
                .collect(),
        }
    }

    fn install(&mut self, t: Thumbprint, expire: Option<Timestamp>) -> EventOutcome {
        match self.table.install(t) {
            Ok(_) => {
                self.pending_retries.remove(&t);
                self.known.insert(t, expire);
                EventOutcome::Installed(t)
            }
            Err(TableError::TableFull { capacity }) => {
                tracing::warn!(thumbprint = %t, capacity, "thumbprint table full, install deferred");
                self.pending_retries.insert(t, expire);
                EventOutcome::Deferred(t)
            }
        }
    }

    fn remove(&mut self, t: Thumbprint) -> EventOutcome {
        self.table.remove(&t);
        self.known.remove(&t);
        self.pending_retries.remove(&t);
        EventOutcome::Removed(t)
    }

    pub fn on_ledger_event(&mut self, event: &LedgerEvent, now: Timestamp) -> EventOutcome {
        if self.last_event_id.is_some_and(|last| event.seq <= last) {
            return EventOutcome::Stale;
        }
        let outcome = self.apply(event, now);
        self.last_event_id = Some(event.seq);
        let action = event.envelope.action().map(|a| a.kind).ok();
        match &outcome {
            EventOutcome::Unauthorized | EventOutcome::Malformed | EventOutcome::Deferred(_) => {
                tracing::warn!(event_id = event.seq, ?action, ?outcome, "ledger event not applied")
            }
            _ => tracing::info!(event_id = event.seq, ?action, ?outcome, "ledger event applied"),
        }
        outcome
    }

    fn apply(&mut self, event: &LedgerEvent, now: Timestamp) -> EventOutcome {
        if !event.envelope.verify_sender(&self.keyring) {
            return EventOutcome::Unauthorized;
        }
        let Ok(action) = event.envelope.action() else {
            return EventOutcome::Malformed;
        };
        let Ok(t) = action.thumbprint() else {
            return EventOutcome::Malformed;
        };
        match action.kind {
            ActionKind::Issue => {
                if action.expire_date.is_some_and(|e| e < now) {
                    return EventOutcome::Expired(t);
                }
                self.install(t, action.expire_date)
            }
            ActionKind::Revoke => self.remove(t),
        }
    }

    /// Makes the table equal to the registry's valid set.
    pub fn sync_full(&mut self, registry: &[CertificateRecord], now: Timestamp) -> SyncReport {
        let want: BTreeMap<Thumbprint, Option<Timestamp>> = registry
            .iter()
            .filter(|r| !r.is_expired_at(now))
            .map(|r| (r.thumbprint(), r.expire_date))
            .collect();
        let mut report = SyncReport::default();
        let (_, current) = self.table.snapshot();
        let stale: BTreeSet<Thumbprint> = current
            .into_iter()
            .chain(self.known.keys().copied())
            .chain(self.pending_retries.keys().copied())
            .filter(|t| !want.contains_key(t))
            .collect();
        for t in stale {
            self.remove(t);
            report.removed.push(t);
        }
        for (t, e) in want {
            match self.install(t, e) {
                EventOutcome::Deferred(t) => report.deferred.push(t),
                _ => report.installed.push(t),
            }
        }
        report
    }

    /// Trust nothing: used when the registry cannot be reached.
    pub fn clear(&mut self) {
        for t in self.table.snapshot().1 {
            self.table.remove(&t);
        }
        self.known.clear();
        self.pending_retries.clear();
    }

    /// Removes every record whose expiry lies strictly before `now`.
    pub fn expire_sweep(&mut self, now: Timestamp) -> Vec<Thumbprint> {
        let expired: Vec<Thumbprint> = self
            .known
            .iter()
            .chain(self.pending_retries.iter())
            .filter(|(_, e)| e.is_some_and(|e| e < now))
            .map(|(t, _)| *t)
            .collect();
        for t in &expired {
            self.remove(*t);
        }
        expired
    }

    pub fn retry_pending(&mut self) -> Vec<Thumbprint> {
        let queued: Vec<_> = self.pending_retries.iter().map(|(t, e)| (*t, *e)).collect();
        queued
            .into_iter()
            .filter(|(t, e)| matches!(self.install(*t, *e), EventOutcome::Installed(_)))
            .map(|(t, _)| t)
            .collect()
    }
}

/// Where the controller reads ledger events from.
#[derive(Clone)]
pub enum LedgerSource {
    Local(Arc<LedgerNode>),
    Remote(SocketAddr),
}

impl LedgerSource {
    pub async fn subscribe(&self, layer: Layer, tag: &str, from: u64) -> Result<Subscription, WireError> {
        match self {
            LedgerSource::Local(node) => Ok(node.subscribe(layer, tag, from)),
            LedgerSource::Remote(addr) => LedgerClient::connect(*addr).await?.subscribe(layer, tag, from).await,
        }
    }

    pub async fn get_all(&self) -> Result<Vec<CertificateRecord>, WireError> {
        match self {
            LedgerSource::Local(node) => Ok(node.get_all_certificates()),
            LedgerSource::Remote(addr) => LedgerClient::connect(*addr).await?.get_all().await,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub layer: Layer,
    pub tag: String,
    pub snapshot_path: Option<PathBuf>,
    pub sweep_interval_ms: u64,
    pub retry_interval_ms: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            layer: Layer::L1,
            tag: DEFAULT_TAG.into(),
            snapshot_path: None,
            sweep_interval_ms: 1000,
            retry_interval_ms: 1000,
        }
    }
}

pub struct ControllerHandle {
    /// Sequence number of the last event handled.
    pub applied: watch::Receiver<Option<u64>>,
    task: JoinHandle<()>,
}

impl ControllerHandle {
    pub fn abort(&self) {
        self.task.abort();
    }
}

impl Drop for ControllerHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Starts the event loop: snapshot restore, initial sync, then events,
/// expiry sweeps and retries, all applied on one task.
pub fn spawn_controller(
    table: Arc<ThumbprintTable>,
    keyring: AdminKeyring,
    source: LedgerSource,
    config: ControllerConfig,
) -> ControllerHandle {
    let (applied_tx, applied) = watch::channel(None);
    let task = tokio::spawn(async move {
        let now = Timestamp::now();
        let mut c = match config.snapshot_path.as_deref().map(Snapshot::load) {
            Some(Ok(snap)) => Controller::restore(table, keyring, &snap, now),
            Some(Err(e)) => {
                tracing::info!(error = %e, "starting without snapshot");
                Controller::new(table, keyring)
            }
            None => Controller::new(table, keyring),
        };
        applied_tx.send_replace(c.last_event_id());
        let mut sub: Option<Subscription> = None;
        let mut synced = config.layer == Layer::L1;
        let mut sweep = tokio::time::interval(Duration::from_millis(config.sweep_interval_ms.max(1)));
        let mut retry = tokio::time::interval(Duration::from_millis(config.retry_interval_ms.max(1)));
        loop {
            if !synced {
                match source.get_all().await {
                    Ok(records) => {
                        let report = c.sync_full(&records, Timestamp::now());
                        tracing::info!(installed = report.installed.len(), removed = report.removed.len(), "registry sync");
                        synced = true;
                    }
                    Err(e) => {
                        tracing::warn!(error = %e, "registry unavailable, table cleared");
                        c.clear();
                    }
                }
            }
            if sub.is_none() {
                let from = c.last_event_id().map_or(0, |s| s + 1);
                match source.subscribe(config.layer, &config.tag, from).await {
                    Ok(s) => sub = Some(s),
                    Err(e) => tracing::warn!(error = %e, "ledger subscription failed"),
                }
            }
            if sub.is_none() || !synced {
                tokio::time::sleep(Duration::from_millis(config.retry_interval_ms.max(1))).await;
                continue;
            }
            let s = sub.as_mut().expect("subscribed");
            tokio::select! {
                ev = s.recv() => match ev {
                    Some(ev) => {
                        c.on_ledger_event(&ev, Timestamp::now());
                        persist(&c, &config);
                        applied_tx.send_replace(c.last_event_id());
                    }
                    None => {
                        tracing::warn!("ledger subscription closed, resubscribing");
                        sub = None;
                    }
                },
                _ = sweep.tick() => {
                    if !c.expire_sweep(Timestamp::now()).is_empty() {
                        persist(&c, &config);
                    }
                }
                _ = retry.tick() => {
                    if !c.retry_pending().is_empty() {
                        persist(&c, &config);
                    }
                }
            }
        }
    });
    ControllerHandle { applied, task }
}

fn persist(c: &Controller, config: &ControllerConfig) {
    if let Some(path) = &config.snapshot_path {
        if let Err(e) = c.snapshot().save(path) {
            tracing::warn!(error = %e, "snapshot not written");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::hash_thumbprint;
    use crate::ledger::{AdminKey, CertificateAction, ContractCall, Envelope, LedgerTransaction, TxId};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn admin() -> AdminKey {
        AdminKey::from_seed([3; 32])
    }

    fn controller(capacity: usize) -> Controller {
        Controller::new(Arc::new(ThumbprintTable::new(capacity)), AdminKeyring::new([admin().public()]))
    }

    fn event(seq: u64, key: &AdminKey, action: CertificateAction) -> LedgerEvent {
        let p = TxId([1; 32]);
        let tx = LedgerTransaction::new(key, DEFAULT_TAG, action.encode().unwrap(), vec![p, p], Timestamp(1)).unwrap();
        LedgerEvent {
            seq,
            envelope: Envelope::L1(tx),
            confirmed: true,
            delivered_at: Timestamp(1),
        }
    }

    fn table_set(c: &Controller) -> BTreeSet<Thumbprint> {
        c.table().snapshot().1.into_iter().collect()
    }

    const NOW: Timestamp = Timestamp(1_000_000);

    #[test]
    fn issue_revoke_and_duplicates() {
        let mut c = controller(8);
        let cert = b"cert-a".to_vec();
        let t = hash_thumbprint(&cert).unwrap();
        let far = Some(Timestamp(2_000_000));
        let issue = CertificateAction::issue(cert.clone(), far.unwrap());
        assert!(!c.table().lookup(&t));
        assert_eq!(c.on_ledger_event(&event(0, &admin(), issue.clone()), NOW), EventOutcome::Installed(t));
        assert!(c.table().lookup(&t));
        assert_eq!(c.on_ledger_event(&event(1, &admin(), issue), NOW), EventOutcome::Installed(t));
        assert_eq!(c.table().len(), 1);
        assert_eq!(c.on_ledger_event(&event(1, &admin(), CertificateAction::revoke(cert.clone())), NOW), EventOutcome::Stale);
        assert_eq!(c.on_ledger_event(&event(2, &admin(), CertificateAction::revoke(cert)), NOW), EventOutcome::Removed(t));
        assert!(!c.table().lookup(&t));
    }

    #[test]
    fn unauthorized_events_change_nothing() {
        let mut c = controller(8);
        let intruder = AdminKey::from_seed([4; 32]);
        let gen = c.table().generation();
        let ev = event(0, &intruder, CertificateAction::issue(b"x".to_vec(), Timestamp(2_000_000)));
        assert_eq!(c.on_ledger_event(&ev, NOW), EventOutcome::Unauthorized);

        let call = ContractCall::new(&intruder, &CertificateAction::issue(b"y".to_vec(), Timestamp(2_000_000)), 0).unwrap();
        let ev = LedgerEvent {
            seq: 1,
            envelope: Envelope::L2(call),
            confirmed: true,
            delivered_at: NOW,
        };
        assert_eq!(c.on_ledger_event(&ev, NOW), EventOutcome::Unauthorized);
        assert_eq!(c.table().generation(), gen);
        assert!(c.table().is_empty());
    }

    #[test]
    fn expired_issue_is_not_installed() {
        let mut c = controller(8);
        let ev = event(0, &admin(), CertificateAction::issue(b"old".to_vec(), Timestamp(5)));
        assert!(matches!(c.on_ledger_event(&ev, NOW), EventOutcome::Expired(_)));
        assert!(c.table().is_empty());
    }

    #[test]
    fn full_table_defers_then_retries() {
        let mut c = controller(1);
        let exp = Timestamp(2_000_000);
        c.on_ledger_event(&event(0, &admin(), CertificateAction::issue(b"a".to_vec(), exp)), NOW);
        let tb = hash_thumbprint(b"b").unwrap();
        assert_eq!(
            c.on_ledger_event(&event(1, &admin(), CertificateAction::issue(b"b".to_vec(), exp)), NOW),
            EventOutcome::Deferred(tb)
        );
        assert_eq!(c.pending_retries(), 1);
        c.on_ledger_event(&event(2, &admin(), CertificateAction::revoke(b"a".to_vec())), NOW);
        assert_eq!(c.retry_pending(), vec![tb]);
        assert!(c.table().lookup(&tb));
        assert_eq!(c.pending_retries(), 0);
    }

    #[test]
    fn sync_reconciles_sets() {
        let rec = |s: &str| CertificateRecord::new(s.as_bytes().to_vec(), None).unwrap();
        let mut c = controller(64);
        for s in ["b", "c"] {
            c.install(rec(s).thumbprint(), None);
        }
        let report = c.sync_full(&[rec("a"), rec("b")], NOW);
        assert_eq!(report.removed, vec![rec("c").thumbprint()]);
        assert_eq!(table_set(&c), [rec("a"), rec("b")].iter().map(|r| r.thumbprint()).collect());
        c.sync_full(&[], NOW);
        assert!(c.table().is_empty());
    }

    #[test]
    fn sync_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pool: Vec<CertificateRecord> = (0..80u8).map(|i| CertificateRecord::new(vec![0x30, i], None).unwrap()).collect();
        for _ in 0..200 {
            let mut c = controller(1024);
            let before: Vec<_> = pool.iter().filter(|_| rng.random_bool(0.3)).take(50).collect();
            for r in &before {
                c.install(r.thumbprint(), None);
            }
            let registry: Vec<CertificateRecord> = pool.iter().filter(|_| rng.random_bool(0.3)).take(50).cloned().collect();
            c.sync_full(&registry, NOW);
            let want: BTreeSet<_> = registry.iter().map(|r| r.thumbprint()).collect();
            assert_eq!(table_set(&c), want);
        }
    }

    #[test]
    fn expiry_sweep_boundaries() {
        let mut c = controller(8);
        let t = hash_thumbprint(b"e").unwrap();
        c.install(t, Some(Timestamp(100)));
        assert!(c.expire_sweep(Timestamp(99)).is_empty());
        assert!(c.expire_sweep(Timestamp(100)).is_empty());
        assert_eq!(c.expire_sweep(Timestamp(101)), vec![t]);
        assert!(!c.table().lookup(&t));
    }

    #[test]
    fn sweep_sequence_matches_filter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut c = controller(1024);
        let mut records = Vec::new();
        for i in 0..100u8 {
            let t = hash_thumbprint(&[i, 1]).unwrap();
            let e = Timestamp(rng.random_range(0..10_000));
            c.install(t, Some(e));
            records.push((t, e));
        }
        let mut clock = 0;
        while clock < 11_000 {
            clock += rng.random_range(0..700);
            c.expire_sweep(Timestamp(clock));
            let want: BTreeSet<_> = records.iter().filter(|(_, e)| e.0 >= clock).map(|(t, _)| *t).collect();
            assert_eq!(table_set(&c), want);
        }
    }

    #[test]
    fn snapshot_round_trip_and_restore() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        let mut c = controller(8);
        c.on_ledger_event(&event(4, &admin(), CertificateAction::issue(b"a".to_vec(), Timestamp(2_000_000))), NOW);
        c.on_ledger_event(&event(5, &admin(), CertificateAction::issue(b"b".to_vec(), Timestamp(1_000_500))), NOW);
        c.snapshot().save(&path).unwrap();
        let snap = Snapshot::load(&path).unwrap();
        assert_eq!(snap.last_event_id, Some(5));
        let table = Arc::new(ThumbprintTable::new(8));
        let r = Controller::restore(table.clone(), AdminKeyring::new([admin().public()]), &snap, Timestamp(1_001_000));
        assert_eq!(table.len(), 1);
        assert_eq!(r.last_event_id(), Some(5));

        std::fs::write(&path, r#"{"format":"other","version":1,"last_event_id":null,"entries":[]}"#).unwrap();
        assert!(Snapshot::load(&path).is_err());
    }

    #[tokio::test]
    async fn runtime_follows_the_ledger() {
        use crate::ledger::NodeConfig;
        let ring = AdminKeyring::new([admin().public()]);
        let node = LedgerNode::start(NodeConfig::default(), ring.clone());
        let table = Arc::new(ThumbprintTable::new(8));
        let handle = spawn_controller(table.clone(), ring, LedgerSource::Local(node.clone()), ControllerConfig::default());
        let cert = b"live".to_vec();
        let t = hash_thumbprint(&cert).unwrap();
        let issue = CertificateAction::issue(cert, Timestamp::now() + Duration::from_secs(60));
        node.submit_action(&admin(), DEFAULT_TAG, &issue).unwrap();
        let mut applied = handle.applied.clone();
        tokio::time::timeout(Duration::from_secs(5), applied.wait_for(|a| a.is_some()))
            .await
            .unwrap()
            .unwrap();
        assert!(table.lookup(&t));
    }
}
