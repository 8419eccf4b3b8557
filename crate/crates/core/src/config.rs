//! TOML configuration shared by the gateway, the administrator tools and
//! the benchmarks.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::dataplane::proxy::DEFAULT_SILENT_HOLD;
use crate::dataplane::{DropMode, PipelineConfig};
use crate::ledger::{AdminKeyring, DistancePreset, L1Params, L2Params, NodeConfig, PublicKey};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: SocketAddr,
    pub upstream: SocketAddr,
    pub opcua_port: u16,
    pub max_chunks: usize,
    pub table_capacity: usize,
    pub validation_enabled: bool,
    pub drop_mode: DropMode,
    pub silent_hold_ms: u64,
    /// Every frame the gateway forwards, as a pcap file.
    pub capture_path: Option<PathBuf>,
    /// Serves the metrics summary as JSON to anyone who connects.
    pub metrics_listen: Option<SocketAddr>,
    /// Metrics summary written on shutdown.
    pub metrics_path: Option<PathBuf>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        GatewaySection {
            listen: SocketAddr::from(([127, 0, 0, 1], 4841)),
            upstream: SocketAddr::from(([127, 0, 0, 1], 4840)),
            opcua_port: p.opcua_port,
            max_chunks: p.max_chunks,
            table_capacity: p.table_capacity,
            validation_enabled: p.validation_enabled,
            drop_mode: p.drop_mode,
            silent_hold_ms: DEFAULT_SILENT_HOLD.as_millis() as u64,
            capture_path: None,
            metrics_listen: None,
            metrics_path: None,
        }
    }
}

impl GatewaySection {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            opcua_port: self.opcua_port,
            max_chunks: self.max_chunks,
            table_capacity: self.table_capacity,
            validation_enabled: self.validation_enabled,
            drop_mode: self.drop_mode,
        }
    }

    pub fn silent_hold(&self) -> Duration {
        Duration::from_millis(self.silent_hold_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    /// The gateway hosts the ledger node itself.
    #[default]
    Embedded,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    pub mode: LedgerMode,
    /// Embedded mode: where the node accepts clients. Remote mode: where to reach it.
    pub address: SocketAddr,
    pub admin_keys: Vec<PublicKey>,
    pub node: NodeConfig,
}

impl Default for LedgerSection {
    fn default() -> Self {
        LedgerSection {
            mode: LedgerMode::Embedded,
            address: SocketAddr::from(([127, 0, 0, 1], 14265)),
            admin_keys: Vec::new(),
            node: NodeConfig::default(),
        }
    }
}

impl LedgerSection {
    pub fn keyring(&self) -> AdminKeyring {
        AdminKeyring::new(self.admin_keys.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub handshakes: usize,
    pub handshake_timeout_ms: u64,
    pub warmup: usize,
    pub trials: usize,
    pub presets: Vec<DistancePreset>,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub l1: L1Params,
    pub l2: L2Params,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            handshakes: 1000,
            handshake_timeout_ms: 2000,
            warmup: 20,
            trials: 300,
            presets: DistancePreset::ALL.to_vec(),
            sizes: vec![1024, 4096, 16384],
            seed: 1,
            l1: L1Params::default(),
            l2: L2Params::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub gateway: GatewaySection,
    pub ledger: LedgerSection,
    pub controller: ControllerConfig,
    pub harness: HarnessSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let cfg: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if self.gateway.max_chunks == 0 {
            return invalid("gateway.max_chunks must be positive");
        }
        if self.gateway.table_capacity == 0 {
            return invalid("gateway.table_capacity must be positive");
        }
        if self.ledger.node.confirmation_k == 0 {
            return invalid("ledger.node.confirmation_k must be positive");
        }
        if !(self.ledger.node.filler_rate >= 0.0) {
            return invalid("ledger.node.filler_rate must be non-negative");
        }
        if self.harness.l1.background_rate <= 0.0 {
            return invalid("harness.l1.background_rate must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg, Config::default());
        assert!(cfg.gateway.validation_enabled);
        assert_eq!(cfg.gateway.table_capacity, 1024);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            [gateway]
            listen = "127.0.0.1:5000"
            upstream = "127.0.0.1:4840"
            table_capacity = 4
            validation_enabled = false
            drop_mode = "reset"

            [ledger]
            mode = "remote"
            admin_keys = ["0101010101010101010101010101010101010101010101010101010101010101"]

            [ledger.node]
            filler_rate = 10.0

            [controller]
            layer = "l2"

            [harness]
            trials = 30
            presets = ["short", "long"]
        "#;
        let cfg: Config = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.gateway.pipeline().table_capacity, 4);
        assert_eq!(cfg.gateway.drop_mode, DropMode::Reset);
        assert_eq!(cfg.ledger.mode, LedgerMode::Remote);
        assert_eq!(cfg.ledger.keyring().iter().count(), 1);
        assert_eq!(cfg.harness.presets, vec![DistancePreset::Short, DistancePreset::Long]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<Config>("[gateway]\nlisten_port = 1").is_err());
        let cfg: Config = toml::from_str("[gateway]\nmax_chunks = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
