//! A ledger node, a controller and any number of gateway instances sharing
//! one thumbprint table, all inside the current process.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use trustgate_core::controller::{spawn_controller, ControllerConfig, ControllerHandle, LedgerSource};
use trustgate_core::dataplane::proxy::{spawn_proxy, ProxyContext, ProxyHandle, VerdictEvent, DEFAULT_SILENT_HOLD};
use trustgate_core::dataplane::{
    event_channel, metrics_channel, DropMode, EventLog, MetricsCollector, Pipeline, PipelineConfig, ThumbprintTable,
};
use trustgate_core::ledger::{
    AdminKey, AdminKeyring, CertificateAction, ContractCall, Layer, LedgerNode, NodeConfig, DEFAULT_TAG,
};
use trustgate_core::time::Timestamp;

use crate::identity::Identity;
use crate::HarnessError;

const PROPAGATION_TIMEOUT: Duration = Duration::from_secs(10);

pub fn admin_key() -> AdminKey {
    AdminKey::from_seed([0xAD; 32])
}

pub struct Testbed {
    pub ledger: Arc<LedgerNode>,
    pub table: Arc<ThumbprintTable>,
    pub layer: Layer,
    admin: AdminKey,
    nonce: AtomicU64,
    _controller: ControllerHandle,
}

/// One gateway instance with its own metrics.
pub struct GatewayTap {
    proxy: ProxyHandle,
    pub metrics: MetricsCollector,
    pub verdicts: EventLog<VerdictEvent>,
}

impl GatewayTap {
    pub fn local_addr(&self) -> SocketAddr {
        self.proxy.local_addr()
    }
}

impl Testbed {
    pub async fn start(layer: Layer) -> Testbed {
        Self::with_capacity(layer, PipelineConfig::default().table_capacity).await
    }

    pub async fn with_capacity(layer: Layer, capacity: usize) -> Testbed {
        let admin = admin_key();
        let keyring = AdminKeyring::new([admin.public()]);
        // Registry calls are delivered on execution; only the tangle needs
        // filler traffic to confirm submissions.
        let node = NodeConfig {
            filler_rate: if layer == Layer::L1 { NodeConfig::default().filler_rate } else { 0.0 },
            ..NodeConfig::default()
        };
        let ledger = LedgerNode::start(node, keyring.clone());
        let table = Arc::new(ThumbprintTable::new(capacity));
        let config = ControllerConfig {
            layer,
            sweep_interval_ms: 200,
            retry_interval_ms: 200,
            ..ControllerConfig::default()
        };
        let controller = spawn_controller(table.clone(), keyring, LedgerSource::Local(ledger.clone()), config);
        Testbed {
            ledger,
            table,
            layer,
            admin,
            nonce: AtomicU64::new(1),
            _controller: controller,
        }
    }

    /// Submits on the configured layer without waiting for propagation.
    pub fn submit(&self, key: &AdminKey, action: &CertificateAction) -> Result<(), HarnessError> {
        match self.layer {
            Layer::L1 => {
                self.ledger.submit_action(key, DEFAULT_TAG, action)?;
            }
            Layer::L2 => {
                let call = ContractCall::new(key, action, self.nonce.fetch_add(1, Ordering::Relaxed))?;
                self.ledger.call_l2(call)?;
            }
        }
        Ok(())
    }

    /// Issues the identity's certificate and waits until the gateway trusts it.
    pub async fn issue(&self, id: &Identity) -> Result<(), HarnessError> {
        let expire = Timestamp::now() + Duration::from_secs(3600);
        self.submit(&self.admin, &CertificateAction::issue(id.der().to_vec(), expire))?;
        self.wait_for(id, true).await
    }

    pub async fn revoke(&self, id: &Identity) -> Result<(), HarnessError> {
        self.submit(&self.admin, &CertificateAction::revoke(id.der().to_vec()))?;
        self.wait_for(id, false).await
    }

    pub async fn wait_for(&self, id: &Identity, trusted: bool) -> Result<(), HarnessError> {
        let tp = id.thumbprint();
        let deadline = tokio::time::Instant::now() + PROPAGATION_TIMEOUT;
        while self.table.lookup(&tp) != trusted {
            if tokio::time::Instant::now() > deadline {
                return Err(HarnessError::Timeout(format!("{} trusted={trusted}", id.name)));
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        Ok(())
    }

    /// A gateway in front of `upstream` that checks against the shared table.
    pub async fn gateway(&self, upstream: SocketAddr, config: PipelineConfig) -> Result<GatewayTap, HarnessError> {
        let (metrics_sink, metrics) = metrics_channel();
        let (verdict_sink, verdicts) = event_channel();
        let ctx = ProxyContext {
            pipeline: Pipeline::new(config, self.table.clone()),
            metrics: metrics_sink,
            verdicts: verdict_sink,
            capture: None,
            silent_hold: DEFAULT_SILENT_HOLD,
        };
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let proxy = spawn_proxy(listener, upstream, ctx)?;
        Ok(GatewayTap {
            proxy,
            metrics,
            verdicts,
        })
    }
}

pub fn pipeline(validation_enabled: bool, drop_mode: DropMode) -> PipelineConfig {
    PipelineConfig {
        validation_enabled,
        drop_mode,
        ..PipelineConfig::default()
    }
}
