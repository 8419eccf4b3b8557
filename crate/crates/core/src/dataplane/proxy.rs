//! Transparent TCP proxy that runs every stream it carries through the pipeline.

use std::fmt;
use std::fs::File;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use socket2::SockRef;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::cert::Thumbprint;

use super::metrics::{EventSink, MetricsSink, PacketRecord};
use super::pcap::{CaptureWriter, Direction, FlowRecorder};
use super::pipeline::{DropMode, DropReason, Pipeline, Verdict};
use super::reassembly::{ChunkFramer, Framed};

const READ_BUF: usize = 64 * 1024;
pub const DEFAULT_SILENT_HOLD: Duration = Duration::from_secs(30);

/// One OPN verdict as seen by the proxy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub connection: u64,
    pub client: SocketAddr,
    pub direction: StreamDirection,
    pub verdict: Verdict,
    pub thumbprint: Option<Thumbprint>,
    pub generation: Option<u64>,
    pub processing_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamDirection {
    ClientToServer,
    ServerToClient,
}

impl fmt::Display for StreamDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamDirection::ClientToServer => "c2s",
            StreamDirection::ServerToClient => "s2c",
        })
    }
}

/// Records carried traffic as synthesized frames, one flow per connection.
pub struct CaptureTap {
    writer: Mutex<CaptureWriter<File>>,
}

impl CaptureTap {
    pub fn create(path: &std::path::Path) -> std::io::Result<Self> {
        let f = File::create(path)?;
        let writer = CaptureWriter::new(f).map_err(std::io::Error::other)?;
        Ok(CaptureTap {
            writer: Mutex::new(writer),
        })
    }

    fn write(&self, frames: Vec<Vec<u8>>) {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        for f in frames {
            if let Err(e) = w.write_frame(&f) {
                tracing::warn!(error = %e, "capture write failed");
                return;
            }
        }
    }
}

#[derive(Clone)]
pub struct ProxyContext {
    pub pipeline: Pipeline,
    pub metrics: MetricsSink,
    pub verdicts: EventSink<VerdictEvent>,
    pub capture: Option<Arc<CaptureTap>>,
    pub silent_hold: Duration,
}

pub struct ProxyHandle {
    local_addr: SocketAddr,
    accept: JoinHandle<()>,
}

impl ProxyHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting; established connections run to completion.
    pub fn shutdown(self) {
        self.accept.abort();
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        self.accept.abort();
    }
}

/// Accepts on `listener` and relays each connection to `upstream`.
pub fn spawn_proxy(listener: TcpListener, upstream: SocketAddr, ctx: ProxyContext) -> std::io::Result<ProxyHandle> {
    let local_addr = listener.local_addr()?;
    let ctx = Arc::new(ctx);
    let accept = tokio::spawn(async move {
        let mut next_id = 0u64;
        loop {
            let (client, peer) = match listener.accept().await {
                Ok(x) => x,
                Err(e) => {
                    tracing::warn!(error = %e, "accept failed");
                    continue;
                }
            };
            next_id += 1;
            let ctx = Arc::clone(&ctx);
            let id = next_id;
            tokio::spawn(async move {
                if let Err(e) = relay(id, client, peer, upstream, ctx).await {
                    tracing::debug!(connection = id, error = %e, "relay ended with error");
                }
            });
        }
    });
    Ok(ProxyHandle { local_addr, accept })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConnState {
    Open,
    Dropped(DropMode),
}

struct Queued {
    bytes: Vec<u8>,
    enqueued: Instant,
    /// Present for units that went through the pipeline.
    record: Option<(u64, bool)>,
}

struct Leg {
    id: u64,
    client: SocketAddr,
    dir: StreamDirection,
    ctx: Arc<ProxyContext>,
    state: watch::Sender<ConnState>,
    /// Subscribed before the leg's task starts, so an early drop is never missed.
    watch: watch::Receiver<ConnState>,
    capture: Option<Arc<Mutex<FlowRecorder>>>,
}

async fn relay(
    id: u64,
    client: TcpStream,
    peer: SocketAddr,
    upstream: SocketAddr,
    ctx: Arc<ProxyContext>,
) -> std::io::Result<()> {
    let server = match TcpStream::connect(upstream).await {
        Ok(s) => s,
        Err(e) => {
            let _ = SockRef::from(&client).set_linger(Some(Duration::ZERO));
            return Err(e);
        }
    };
    client.set_nodelay(true)?;
    server.set_nodelay(true)?;

    let capture = match (&ctx.capture, peer, upstream) {
        (Some(tap), SocketAddr::V4(c), SocketAddr::V4(s)) => {
            let mut rec = FlowRecorder::new(c, s, id as u32 * 7919, id as u32 * 104_729);
            tap.write(rec.handshake());
            Some(Arc::new(Mutex::new(rec)))
        }
        _ => None,
    };

    let (state_tx, _) = watch::channel(ConnState::Open);
    let (cr, cw) = client.into_split();
    let (sr, sw) = server.into_split();
    let (c2s_tx, c2s_rx) = mpsc::unbounded_channel();
    let (s2c_tx, s2c_rx) = mpsc::unbounded_channel();

    let leg = |dir| Leg {
        id,
        client: peer,
        dir,
        ctx: Arc::clone(&ctx),
        state: state_tx.clone(),
        watch: state_tx.subscribe(),
        capture: capture.clone(),
    };
    let tasks = [
        tokio::spawn(read_loop(cr, c2s_tx, leg(StreamDirection::ClientToServer))),
        tokio::spawn(read_loop(sr, s2c_tx, leg(StreamDirection::ServerToClient))),
        tokio::spawn(write_loop(sw, c2s_rx, leg(StreamDirection::ClientToServer))),
        tokio::spawn(write_loop(cw, s2c_rx, leg(StreamDirection::ServerToClient))),
    ];
    drop(state_tx);
    for t in tasks {
        let _ = t.await;
    }
    Ok(())
}

async fn read_loop(mut rd: OwnedReadHalf, tx: mpsc::UnboundedSender<Queued>, leg: Leg) {
    let mut state = leg.watch.clone();
    let pipeline = &leg.ctx.pipeline;
    let validating = pipeline.config().validation_enabled;
    let mut framer = Some(ChunkFramer::new(pipeline.config().reassembly_limit()));
    let mut buf = vec![0u8; READ_BUF];
    let mut units = Vec::new();

    loop {
        let n = tokio::select! {
            r = rd.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
            _ = state.changed() => 0,
        };
        let current = *state.borrow();
        if let ConnState::Dropped(mode) = current {
            hold_or_reset(&mut rd, mode, &leg).await;
            return;
        }
        if n == 0 {
            continue;
        }
        let data = &buf[..n];
        if let Some(cap) = &leg.capture {
            let frames = cap.lock().unwrap_or_else(|e| e.into_inner()).send(direction_of(leg.dir), data);
            if let Some(tap) = &leg.ctx.capture {
                tap.write(frames);
            }
        }

        let Some(f) = framer.as_mut() else {
            // framing was lost with validation disabled: plain relay
            let _ = tx.send(Queued {
                bytes: data.to_vec(),
                enqueued: Instant::now(),
                record: None,
            });
            continue;
        };
        units.clear();
        let framed = f.push_into(data, &mut units);
        let mut dropped = None;
        for unit in units.drain(..) {
            let d = pipeline.process(&unit);
            if d.tagged {
                leg.ctx.verdicts.record(VerdictEvent {
                    connection: leg.id,
                    client: leg.client,
                    direction: leg.dir,
                    verdict: d.verdict,
                    thumbprint: d.thumbprint,
                    generation: d.generation,
                    processing_ns: d.processing_ns,
                });
            }
            if let Verdict::Drop(reason) = d.verdict {
                dropped = Some(reason);
                break;
            }
            let _ = tx.send(Queued {
                bytes: unit_bytes(unit),
                enqueued: Instant::now(),
                record: Some((d.processing_ns, d.tagged)),
            });
        }
        if dropped.is_none() {
            if let Err(e) = framed {
                if validating {
                    leg.ctx.verdicts.record(VerdictEvent {
                        connection: leg.id,
                        client: leg.client,
                        direction: leg.dir,
                        verdict: Verdict::Drop(DropReason::MalformedOpn),
                        thumbprint: None,
                        generation: None,
                        processing_ns: 0,
                    });
                    dropped = Some(DropReason::MalformedOpn);
                } else {
                    tracing::debug!(connection = leg.id, error = %e, "framing lost, relaying raw");
                    let rest = f.take_buffered();
                    if !rest.is_empty() {
                        let _ = tx.send(Queued {
                            bytes: rest,
                            enqueued: Instant::now(),
                            record: None,
                        });
                    }
                    framer = None;
                }
            }
        }
        if let Some(reason) = dropped {
            let mode = pipeline.config().drop_mode;
            tracing::info!(connection = leg.id, direction = %leg.dir, ?reason, ?mode, "dropping connection");
            leg.state.send_replace(ConnState::Dropped(mode));
            hold_or_reset(&mut rd, mode, &leg).await;
            return;
        }
    }
}

fn unit_bytes(unit: Framed) -> Vec<u8> {
    unit.into_bytes()
}

fn direction_of(dir: StreamDirection) -> Direction {
    match dir {
        StreamDirection::ClientToServer => Direction::ClientToServer,
        StreamDirection::ServerToClient => Direction::ServerToClient,
    }
}

/// After a drop: either abort the socket or keep it open and discard input
/// until the peer gives up or the hold time passes.
async fn hold_or_reset(rd: &mut OwnedReadHalf, mode: DropMode, leg: &Leg) {
    match mode {
        DropMode::Reset => {
            let _ = SockRef::from(rd.as_ref()).set_linger(Some(Duration::ZERO));
        }
        DropMode::Silent => {
            let mut sink = vec![0u8; READ_BUF];
            let _ = tokio::time::timeout(leg.ctx.silent_hold, async {
                loop {
                    match rd.read(&mut sink).await {
                        Ok(0) | Err(_) => break,
                        Ok(_) => {}
                    }
                }
            })
            .await;
        }
    }
}

async fn write_loop(mut wr: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Queued>, leg: Leg) {
    let mut state = leg.watch.clone();
    loop {
        let item = tokio::select! {
            biased;
            _ = state.changed() => None,
            item = rx.recv() => match item {
                Some(q) => Some(q),
                None => {
                    let _ = wr.shutdown().await;
                    return;
                }
            },
        };
        let current = *state.borrow();
        if let ConnState::Dropped(mode) = current {
            match mode {
                DropMode::Reset => {
                    let _ = SockRef::from(wr.as_ref()).set_linger(Some(Duration::ZERO));
                    // dropping without shutdown so no FIN precedes the reset
                    wr.forget();
                }
                DropMode::Silent => tokio::time::sleep(leg.ctx.silent_hold).await,
            }
            return;
        }
        let Some(q) = item else { continue };
        if let Some((processing_ns, tagged)) = q.record {
            leg.ctx.metrics.record(PacketRecord {
                processing_ns,
                dequeue_ns: Some(super::pipeline::elapsed_ns(q.enqueued)),
                tagged,
            });
        }
        if wr.write_all(&q.bytes).await.is_err() {
            return;
        }
    }
}

