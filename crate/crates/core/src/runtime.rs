//! Assembles a running gateway: proxy, thumbprint table, controller and
//! (optionally) an embedded ledger node.

use std::net::SocketAddr;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::config::{Config, LedgerMode};
use crate::controller::{spawn_controller, ControllerHandle, LedgerSource};
use crate::dataplane::proxy::{spawn_proxy, CaptureTap, ProxyContext, ProxyHandle, VerdictEvent};
use crate::dataplane::{event_channel, metrics_channel, EventLog, MetricsCollector, MetricsSummary, Pipeline, ThumbprintTable};
use crate::ledger::{wire, LedgerNode};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("capture file: {0}")]
    Capture(std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct GatewayReport {
    pub metrics: MetricsSummary,
    pub allowed: usize,
    pub dropped: usize,
    pub table_entries: usize,
}

pub struct Gateway {
    pub table: Arc<ThumbprintTable>,
    pub ledger: Option<Arc<LedgerNode>>,
    /// Where ledger clients connect.
    pub ledger_addr: SocketAddr,
    pub controller: ControllerHandle,
    proxy: ProxyHandle,
    metrics: Arc<MetricsCollector>,
    verdicts: Arc<EventLog<VerdictEvent>>,
    background: Vec<JoinHandle<()>>,
    metrics_path: Option<std::path::PathBuf>,
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, GatewayError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::Bind { addr, source })
}

impl Gateway {
    pub async fn start(config: &Config) -> Result<Gateway, GatewayError> {
        config.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        let keyring = config.ledger.keyring();
        if keyring.is_empty() {
            return Err(GatewayError::Config("ledger.admin_keys is empty".into()));
        }
        let mut background = Vec::new();

        let (ledger, ledger_addr, source) = match config.ledger.mode {
            LedgerMode::Embedded => {
                let node = LedgerNode::start(config.ledger.node.clone(), keyring.clone());
                let listener = bind(config.ledger.address).await?;
                let addr = listener.local_addr().map_err(GatewayError::Capture)?;
                background.push(wire::serve(listener, node.clone()));
                (Some(node.clone()), addr, LedgerSource::Local(node))
            }
            LedgerMode::Remote => (None, config.ledger.address, LedgerSource::Remote(config.ledger.address)),
        };

        let pipeline_cfg = config.gateway.pipeline();
        let table = Arc::new(ThumbprintTable::new(pipeline_cfg.table_capacity));
        let controller = spawn_controller(table.clone(), keyring, source, config.controller.clone());

        let (metrics_sink, metrics) = metrics_channel();
        let (verdict_sink, verdicts) = event_channel();
        let capture = match &config.gateway.capture_path {
            Some(p) => Some(Arc::new(CaptureTap::create(p).map_err(GatewayError::Capture)?)),
            None => None,
        };
        let ctx = ProxyContext {
            pipeline: Pipeline::new(pipeline_cfg, table.clone()),
            metrics: metrics_sink,
            verdicts: verdict_sink,
            capture,
            silent_hold: config.gateway.silent_hold(),
        };
        let listener = bind(config.gateway.listen).await?;
        let proxy = spawn_proxy(listener, config.gateway.upstream, ctx).map_err(GatewayError::Capture)?;
        let metrics = Arc::new(metrics);
        let verdicts = Arc::new(verdicts);

        if let Some(addr) = config.gateway.metrics_listen {
            let listener = bind(addr).await?;
            let metrics = metrics.clone();
            background.push(tokio::spawn(async move {
                while let Ok((mut s, _)) = listener.accept().await {
                    let body = serde_json::to_vec(&metrics.summary()).unwrap_or_default();
                    let _ = s.write_all(&body).await;
                    let _ = s.shutdown().await;
                }
            }));
        }

        Ok(Gateway {
            table,
            ledger,
            ledger_addr,
            controller,
            proxy,
            metrics,
            verdicts,
            background,
            metrics_path: config.gateway.metrics_path.clone(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.proxy.local_addr()
    }

    pub fn report(&self) -> GatewayReport {
        let verdicts = self.verdicts.events();
        let allowed = verdicts.iter().filter(|v| v.verdict.is_allow()).count();
        GatewayReport {
            metrics: self.metrics.summary(),
            allowed,
            dropped: verdicts.len() - allowed,
            table_entries: self.table.len(),
        }
    }

    pub fn verdicts(&self) -> Vec<VerdictEvent> {
        self.verdicts.events()
    }

    /// Stops accepting and writes the metrics summary if configured.
    pub fn shutdown(self) -> std::io::Result<GatewayReport> {
        let report = self.report();
        if let Some(path) = &self.metrics_path {
            std::fs::write(path, serde_json::to_vec_pretty(&report)?)?;
        }
        for h in &self.background {
            h.abort();
        }
        self.controller.abort();
        self.proxy.shutdown();
        Ok(report)
    }
}
