//! Capture files: synthesizing frames for a TCP flow and replaying captures
//! through the pipeline without forwarding.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::net::SocketAddrV4;
use std::time::{Duration, Instant};

use etherparse::PacketBuilder;
use pcap_file::pcap::{PcapPacket, PcapReader, PcapWriter};
use pcap_file::DataLink;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{MetricsSummary, PacketRecord};
use super::packet::{parse_packet, ParsedPacket};
use super::pipeline::{DropReason, Pipeline, Verdict};
use super::reassembly::{Framed, TcpStreamState, DEFAULT_GAP_TIMEOUT};

const MSS: usize = 1460;
const WINDOW: u16 = 65535;

fn mac_for(addr: &SocketAddrV4) -> [u8; 6] {
    let o = addr.ip().octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

/// Builds Ethernet/IPv4/TCP frames for one direction of a flow.
#[derive(Debug, Clone, Copy)]
pub struct FrameBuilder {
    src: SocketAddrV4,
    dst: SocketAddrV4,
}

impl FrameBuilder {
    pub fn new(src: SocketAddrV4, dst: SocketAddrV4) -> Self {
        FrameBuilder { src, dst }
    }

    fn build(&self, seq: u32, ack: Option<u32>, syn: bool, payload: &[u8]) -> Vec<u8> {
        let b = PacketBuilder::ethernet2(mac_for(&self.src), mac_for(&self.dst))
            .ipv4(self.src.ip().octets(), self.dst.ip().octets(), 64)
            .tcp(self.src.port(), self.dst.port(), seq, WINDOW);
        let b = if syn { b.syn() } else { b };
        let b = match ack {
            Some(a) => b.ack(a),
            None => b,
        };
        let b = if payload.is_empty() { b } else { b.psh() };
        let mut out = Vec::with_capacity(b.size(payload.len()));
        b.write(&mut out, payload).expect("writing to a Vec cannot fail");
        out
    }

    pub fn syn(&self, seq: u32) -> Vec<u8> {
        self.build(seq, None, true, &[])
    }

    pub fn syn_ack(&self, seq: u32, ack: u32) -> Vec<u8> {
        self.build(seq, Some(ack), true, &[])
    }

    pub fn ack(&self, seq: u32, ack: u32) -> Vec<u8> {
        self.build(seq, Some(ack), false, &[])
    }

    pub fn data(&self, seq: u32, payload: &[u8]) -> Vec<u8> {
        self.build(seq, None, false, payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

/// Tracks sequence numbers of a client/server flow and emits frames for the
/// bytes each side sends, split at a typical MSS.
#[derive(Debug, Clone)]
pub struct FlowRecorder {
    c2s: FrameBuilder,
    s2c: FrameBuilder,
    client_seq: u32,
    server_seq: u32,
}

impl FlowRecorder {
    pub fn new(client: SocketAddrV4, server: SocketAddrV4, client_isn: u32, server_isn: u32) -> Self {
        FlowRecorder {
            c2s: FrameBuilder::new(client, server),
            s2c: FrameBuilder::new(server, client),
            client_seq: client_isn,
            server_seq: server_isn,
        }
    }

    pub fn handshake(&mut self) -> Vec<Vec<u8>> {
        let syn = self.c2s.syn(self.client_seq);
        self.client_seq = self.client_seq.wrapping_add(1);
        let syn_ack = self.s2c.syn_ack(self.server_seq, self.client_seq);
        self.server_seq = self.server_seq.wrapping_add(1);
        let ack = self.c2s.ack(self.client_seq, self.server_seq);
        vec![syn, syn_ack, ack]
    }

    pub fn send(&mut self, dir: Direction, bytes: &[u8]) -> Vec<Vec<u8>> {
        let (builder, seq) = match dir {
            Direction::ClientToServer => (&self.c2s, &mut self.client_seq),
            Direction::ServerToClient => (&self.s2c, &mut self.server_seq),
        };
        bytes
            .chunks(MSS)
            .map(|seg| {
                let f = builder.data(*seq, seg);
                *seq = seq.wrapping_add(seg.len() as u32);
                f
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("capture unreadable: {0}")]
    CaptureUnreadable(String),
    #[error("capture write failed: {0}")]
    Write(String),
}

/// Writes frames to a standard capture file, stamped relative to creation.
pub struct CaptureWriter<W: Write> {
    writer: PcapWriter<W>,
    start: Instant,
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(w: W) -> Result<Self, CaptureError> {
        Ok(CaptureWriter {
            writer: PcapWriter::new(w).map_err(|e| CaptureError::Write(e.to_string()))?,
            start: Instant::now(),
        })
    }

    pub fn write_frame(&mut self, frame: &[u8]) -> Result<(), CaptureError> {
        self.write_frame_at(self.start.elapsed(), frame)
    }

    pub fn write_frame_at(&mut self, ts: Duration, frame: &[u8]) -> Result<(), CaptureError> {
        let pkt = PcapPacket::new(ts, frame.len() as u32, frame);
        self.writer
            .write_packet(&pkt)
            .map(|_| ())
            .map_err(|e| CaptureError::Write(e.to_string()))
    }

    pub fn into_inner(self) -> W {
        self.writer.into_writer()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub flow: String,
    /// Sender thumbprint in hex, when extraction got that far.
    pub thumbprint: Option<String>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub frames: usize,
    pub tagged_frames: usize,
    pub non_opn_frames: usize,
    /// Frames belonging to connections after a drop.
    pub blocked_frames: usize,
    pub unparseable_frames: usize,
    pub verdicts: Vec<VerdictLine>,
    pub metrics: MetricsSummary,
}

/// Stateful frame-by-frame pipeline used for capture replay.
pub struct FrameProcessor {
    pipeline: Pipeline,
    streams: HashMap<(SocketAddrV4, SocketAddrV4), TcpStreamState>,
    /// Connections no longer inspected: dropped ones, and with validation
    /// disabled, ones whose framing was lost.
    dropped: HashSet<(SocketAddrV4, SocketAddrV4)>,
    raw: HashSet<(SocketAddrV4, SocketAddrV4)>,
    records: Vec<PacketRecord>,
    report: ReplayReport,
}

fn conn_key(a: SocketAddrV4, b: SocketAddrV4) -> (SocketAddrV4, SocketAddrV4) {
    if (a.ip().octets(), a.port()) <= (b.ip().octets(), b.port()) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Outcome of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutcome {
    pub packet: Option<ParsedPacket>,
    pub verdicts: Vec<VerdictLine>,
    pub forwarded: bool,
}

impl FrameProcessor {
    pub fn new(pipeline: Pipeline) -> Self {
        FrameProcessor {
            pipeline,
            streams: HashMap::new(),
            dropped: HashSet::new(),
            raw: HashSet::new(),
            records: Vec::new(),
            report: ReplayReport::default(),
        }
    }

    pub fn process_frame(&mut self, frame: &[u8], ts: Duration) -> FrameOutcome {
        self.report.frames += 1;
        let port = self.pipeline.config().opcua_port;
        let mut out = FrameOutcome {
            packet: None,
            verdicts: Vec::new(),
            forwarded: true,
        };
        let mut pkt = match parse_packet(frame, port) {
            Ok(p) => p,
            Err(_) => {
                self.report.unparseable_frames += 1;
                return out;
            }
        };
        let Some((src, dst)) = pkt.endpoints().filter(|_| pkt.touches_port(port)) else {
            self.report.non_opn_frames += 1;
            out.packet = Some(pkt);
            return out;
        };
        let key = conn_key(src, dst);
        if self.dropped.contains(&key) {
            self.report.blocked_frames += 1;
            out.forwarded = false;
            out.packet = Some(pkt);
            return out;
        }
        if self.raw.contains(&key) {
            self.report.non_opn_frames += 1;
            out.packet = Some(pkt);
            return out;
        }

        let limit = self.pipeline.config().reassembly_limit();
        let stream = self
            .streams
            .entry((src, dst))
            .or_insert_with(|| TcpStreamState::new(limit, DEFAULT_GAP_TIMEOUT));
        let flow = format!("{src}->{dst}");
        match stream.reassemble(&pkt, frame, ts) {
            Ok(r) => {
                pkt.opcua_tag = r.tagged;
                for unit in &r.units {
                    let d = self.pipeline.process(unit);
                    self.records.push(PacketRecord {
                        processing_ns: d.processing_ns,
                        dequeue_ns: None,
                        tagged: d.tagged,
                    });
                    if matches!(unit, Framed::Chunk { .. }) && d.tagged {
                        out.verdicts.push(VerdictLine {
                            flow: flow.clone(),
                            thumbprint: d.thumbprint.map(|t| t.to_hex()),
                            verdict: d.verdict,
                        });
                    }
                    if !d.verdict.is_allow() {
                        out.forwarded = false;
                        self.dropped.insert(key);
                        break;
                    }
                }
            }
            Err(_) if self.pipeline.config().validation_enabled => {
                out.forwarded = false;
                out.verdicts.push(VerdictLine {
                    flow,
                    thumbprint: None,
                    verdict: Verdict::Drop(DropReason::MalformedOpn),
                });
                self.dropped.insert(key);
            }
            Err(_) => {
                self.raw.insert(key);
            }
        }
        if pkt.opcua_tag {
            self.report.tagged_frames += 1;
        } else {
            self.report.non_opn_frames += 1;
        }
        if !out.forwarded {
            self.streams.retain(|k, _| conn_key(k.0, k.1) != key);
        }
        self.report.verdicts.extend(out.verdicts.iter().cloned());
        out.packet = Some(pkt);
        out
    }

    pub fn finish(mut self) -> ReplayReport {
        self.report.metrics = MetricsSummary::from_records(&self.records);
        self.report
    }
}

/// Replays a capture through `pipeline` and reports every OPN verdict.
pub fn replay_capture<R: Read>(reader: R, pipeline: Pipeline) -> Result<ReplayReport, CaptureError> {
    let mut pcap = PcapReader::new(reader).map_err(|e| CaptureError::CaptureUnreadable(e.to_string()))?;
    if pcap.header().datalink != DataLink::ETHERNET {
        return Err(CaptureError::CaptureUnreadable(format!(
            "unsupported link type {:?}",
            pcap.header().datalink
        )));
    }
    let mut proc = FrameProcessor::new(pipeline);
    let mut first_ts = None;
    while let Some(pkt) = pcap.next_packet() {
        let pkt = pkt.map_err(|e| CaptureError::CaptureUnreadable(e.to_string()))?;
        let base = *first_ts.get_or_insert(pkt.timestamp);
        proc.process_frame(&pkt.data, pkt.timestamp.saturating_sub(base));
    }
    Ok(proc.finish())
}
