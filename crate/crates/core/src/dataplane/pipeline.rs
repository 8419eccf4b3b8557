//! Verdicts for framed stream units.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cert::Thumbprint;
use crate::codec::MessageType;

use super::extract::{extract_certificate, ExtractError, DEFAULT_MAX_CHUNKS};
use super::packet::DEFAULT_OPCUA_PORT;
use super::reassembly::{reassembly_limit, Framed};
use super::table::{ThumbprintTable, DEFAULT_TABLE_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    ZeroLengthCertificate,
    CertificateTooLong,
    UntrustedThumbprint,
    MalformedOpn,
}

impl From<ExtractError> for DropReason {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::ZeroLengthCertificate => DropReason::ZeroLengthCertificate,
            ExtractError::CertificateTooLong { .. } => DropReason::CertificateTooLong,
            ExtractError::MalformedOpn(_) => DropReason::MalformedOpn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Allow,
    Drop(DropReason),
}

impl Verdict {
    pub fn is_allow(self) -> bool {
        self == Verdict::Allow
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Allow => f.write_str("Allow"),
            Verdict::Drop(r) => write!(f, "Drop({r:?})"),
        }
    }
}

/// What happens to a connection once one of its OPN chunks is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropMode {
    /// Discard the chunk and everything after it; the peers see silence.
    #[default]
    Silent,
    /// Abort both legs with a TCP reset.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub opcua_port: u16,
    pub max_chunks: usize,
    pub table_capacity: usize,
    pub validation_enabled: bool,
    pub drop_mode: DropMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            opcua_port: DEFAULT_OPCUA_PORT,
            max_chunks: DEFAULT_MAX_CHUNKS,
            table_capacity: DEFAULT_TABLE_CAPACITY,
            validation_enabled: true,
            drop_mode: DropMode::Silent,
        }
    }
}

impl PipelineConfig {
    pub fn reassembly_limit(&self) -> usize {
        reassembly_limit(self.max_chunks)
    }
}

/// The outcome of processing one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub verdict: Verdict,
    /// Set for OPN chunks.
    pub tagged: bool,
    /// Thumbprint of the sender certificate, when it was extracted.
    pub thumbprint: Option<Thumbprint>,
    pub receiver_thumbprint: Option<Thumbprint>,
    /// Table generation the lookup observed.
    pub generation: Option<u64>,
    pub processing_ns: u64,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    table: Arc<ThumbprintTable>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, table: Arc<ThumbprintTable>) -> Self {
        Pipeline { config, table }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn table(&self) -> &Arc<ThumbprintTable> {
        &self.table
    }

    pub fn process(&self, unit: &Framed) -> Decision {
        match unit {
            Framed::Chunk { bytes, .. } => self.process_chunk(bytes),
            Framed::Partial { .. } => {
                let start = Instant::now();
                Decision {
                    verdict: Verdict::Allow,
                    tagged: false,
                    thumbprint: None,
                    receiver_thumbprint: None,
                    generation: None,
                    processing_ns: elapsed_ns(start),
                }
            }
        }
    }

    /// Processes one complete chunk. Only OPN chunks reach the certificate path.
    pub fn process_chunk(&self, chunk: &[u8]) -> Decision {
        let start = Instant::now();
        let mut d = Decision {
            verdict: Verdict::Allow,
            tagged: chunk.starts_with(MessageType::OpenSecureChannel.code()),
            thumbprint: None,
            receiver_thumbprint: None,
            generation: None,
            processing_ns: 0,
        };
        if d.tagged && self.config.validation_enabled {
            match extract_certificate(chunk, self.config.max_chunks) {
                Ok(ex) => {
                    let t = ex.certificate.thumbprint();
                    let (trusted, generation) = self.table.lookup_at(&t);
                    d.thumbprint = Some(t);
                    d.receiver_thumbprint = ex.receiver_thumbprint;
                    d.generation = Some(generation);
                    if !trusted {
                        d.verdict = Verdict::Drop(DropReason::UntrustedThumbprint);
                    }
                }
                Err(e) => d.verdict = Verdict::Drop(e.into()),
            }
        }
        d.processing_ns = elapsed_ns(start);
        d
    }
}

pub(crate) fn elapsed_ns(since: Instant) -> u64 {
    u64::try_from(since.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::hash_thumbprint;
    use crate::codec::{encode_opn, AsymmetricSecurityHeader, OpnMessage, SymmetricChunk};

    fn opn(cert: &[u8]) -> Vec<u8> {
        let sh = AsymmetricSecurityHeader::new("p", Some(cert.to_vec()), Some([1; 20]));
        encode_opn(&OpnMessage::new(0, sh, 1, 1, vec![0; 32])).unwrap()
    }

    fn pipeline(validation: bool) -> Pipeline {
        let config = PipelineConfig {
            validation_enabled: validation,
            ..PipelineConfig::default()
        };
        Pipeline::new(config, Arc::new(ThumbprintTable::default()))
    }

    #[test]
    fn trusted_untrusted_and_msg() {
        let p = pipeline(true);
        let cert = vec![0x30; 900];
        assert_eq!(
            p.process_chunk(&opn(&cert)).verdict,
            Verdict::Drop(DropReason::UntrustedThumbprint)
        );
        p.table().install(hash_thumbprint(&cert).unwrap()).unwrap();
        let d = p.process_chunk(&opn(&cert));
        assert_eq!(d.verdict, Verdict::Allow);
        assert!(d.tagged);
        assert_eq!(d.thumbprint, Some(hash_thumbprint(&cert).unwrap()));

        let msg = SymmetricChunk::new(MessageType::Message, 1, 1, 1, 1, vec![1; 10])
            .encode()
            .unwrap();
        let d = p.process_chunk(&msg);
        assert_eq!(d.verdict, Verdict::Allow);
        assert!(!d.tagged && d.thumbprint.is_none());
    }

    #[test]
    fn extraction_errors_become_drop_reasons() {
        let p = pipeline(true);
        assert_eq!(
            p.process_chunk(&opn(&[])).verdict,
            Verdict::Drop(DropReason::ZeroLengthCertificate)
        );
        assert_eq!(
            p.process_chunk(&opn(&vec![1; 25601])).verdict,
            Verdict::Drop(DropReason::CertificateTooLong)
        );
    }

    #[test]
    fn disabled_validation_tags_but_allows() {
        let p = pipeline(false);
        let d = p.process_chunk(&opn(&[1; 10]));
        assert!(d.tagged);
        assert_eq!(d.verdict, Verdict::Allow);
    }
}
