//! Software emulation of the in-path switch.

pub mod extract;
pub mod metrics;
pub mod packet;
pub mod pcap;
pub mod pipeline;
pub mod proxy;
pub mod reassembly;
pub mod table;

pub use extract::{extract_certificate, swap_length_bytes, CertChunks, ExtractError, Extraction};
pub use metrics::{event_channel, metrics_channel, EventLog, EventSink, ClassStats, MetricsCollector, MetricsSink, MetricsSummary, PacketRecord};
pub use packet::{parse_packet, PacketError, ParsedPacket, DEFAULT_OPCUA_PORT};
pub use pcap::{replay_capture, CaptureError, CaptureWriter, FlowRecorder, FrameBuilder, FrameProcessor, ReplayReport, VerdictLine};
pub use pipeline::{Decision, DropMode, DropReason, Pipeline, PipelineConfig, Verdict};
pub use reassembly::{reassembly_limit, ChunkFramer, Framed, ReassemblyError, TcpStreamState};
pub use table::{TableError, ThumbprintTable, DEFAULT_TABLE_CAPACITY};
