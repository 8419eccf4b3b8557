//! Traffic corpora for pass-through runs and a decoder fuzz driver.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use trustgate_core::codec::{
    decode_chunk, decode_opn, encode_opn, Acknowledge, AsymmetricSecurityHeader, ErrorMessage, Hello, MessageType,
    OpnMessage, SymmetricChunk, SECURITY_POLICY_BASIC256SHA256,
};
use trustgate_core::dataplane::proxy::{spawn_proxy, ProxyContext, DEFAULT_SILENT_HOLD};
use trustgate_core::dataplane::{
    event_channel, extract_certificate, metrics_channel, parse_packet, ChunkFramer, Pipeline, PipelineConfig,
    ThumbprintTable, DEFAULT_OPCUA_PORT,
};
use trustgate_core::ledger::CertificateAction;

use crate::HarnessError;

fn opn(rng: &mut impl Rng) -> Vec<u8> {
    let len = rng.random_range(1..=4096);
    let mut cert = vec![0u8; len];
    rng.fill_bytes(&mut cert);
    let receiver = rng.random_bool(0.5).then(|| rng.random());
    let sh = AsymmetricSecurityHeader::new(SECURITY_POLICY_BASIC256SHA256, Some(cert), receiver);
    let mut body = vec![0u8; rng.random_range(0..256)];
    rng.fill_bytes(&mut body);
    encode_opn(&OpnMessage::new(rng.random(), sh, rng.random(), rng.random(), body)).expect("valid OPN")
}

fn msg(rng: &mut impl Rng) -> Vec<u8> {
    let mut body = vec![0u8; rng.random_range(0..8192)];
    rng.fill_bytes(&mut body);
    let kind = if rng.random_bool(0.95) { MessageType::Message } else { MessageType::CloseSecureChannel };
    SymmetricChunk::new(kind, rng.random(), rng.random(), rng.random(), rng.random(), body)
        .encode()
        .expect("valid MSG")
}

/// One well-formed chunk of a random kind.
pub fn random_chunk(rng: &mut impl Rng) -> Vec<u8> {
    match rng.random_range(0..10) {
        0 => Hello::new("opc.tcp://corpus:4840").encode().expect("valid HEL"),
        1 => Acknowledge::for_hello(&Hello::new("opc.tcp://corpus:4840")).encode().expect("valid ACK"),
        2 => ErrorMessage::new(rng.random(), "corpus").encode().expect("valid ERR"),
        3 | 4 => opn(rng),
        _ => msg(rng),
    }
}

/// About `len` bytes of OPC UA chunks, optionally followed by unframed noise.
///
/// Noise breaks chunk framing for the rest of the stream, so it only ever
/// appears as a tail.
pub fn mixed_traffic(len: usize, noise_tail: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len + noise_tail + 8192);
    while out.len() < len {
        out.extend(random_chunk(&mut rng));
    }
    let start = out.len();
    out.resize(start + noise_tail, 0);
    rng.fill_bytes(&mut out[start..]);
    out
}

/// Sends `upstream_bytes` from a client and `downstream_bytes` from a server
/// through a proxy built from `config`, concurrently, and returns what each
/// side received.
pub async fn relay_through_proxy(
    config: PipelineConfig,
    table: Arc<ThumbprintTable>,
    upstream_bytes: Vec<u8>,
    downstream_bytes: Vec<u8>,
) -> Result<(Vec<u8>, Vec<u8>), HarnessError> {
    let server = TcpListener::bind("127.0.0.1:0").await?;
    let server_addr = server.local_addr()?;
    let server_task = tokio::spawn(async move {
        let (s, _) = server.accept().await?;
        exchange(s, downstream_bytes).await
    });
    let (metrics, _metrics) = metrics_channel();
    let (verdicts, _verdicts) = event_channel();
    let ctx = ProxyContext {
        pipeline: Pipeline::new(config, table),
        metrics,
        verdicts,
        capture: None,
        silent_hold: DEFAULT_SILENT_HOLD,
    };
    let proxy = spawn_proxy(TcpListener::bind("127.0.0.1:0").await?, server_addr, ctx)?;
    let client = TcpStream::connect(proxy.local_addr()).await?;
    let at_client = exchange(client, upstream_bytes).await?;
    let at_server = server_task
        .await
        .map_err(|e| HarnessError::Setup(format!("server task: {e}")))??;
    Ok((at_server, at_client))
}

async fn exchange(s: TcpStream, send: Vec<u8>) -> std::io::Result<Vec<u8>> {
    let (mut rd, mut wr) = s.into_split();
    let writer = tokio::spawn(async move {
        for piece in send.chunks(64 * 1024) {
            wr.write_all(piece).await?;
        }
        wr.shutdown().await
    });
    let mut got = Vec::new();
    rd.read_to_end(&mut got).await?;
    writer.await.map_err(std::io::Error::other)??;
    Ok(got)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FuzzReport {
    pub inputs: u64,
    /// Decoder invocations that returned a value.
    pub accepted: u64,
    /// Decoder invocations that returned a typed error.
    pub rejected: u64,
    pub panics: u64,
    /// The first input that panicked, if any.
    pub first_panic: Option<(String, Vec<u8>)>,
}

type Target = (&'static str, fn(&[u8]) -> bool);

fn framer(b: &[u8]) -> bool {
    let mut f = ChunkFramer::new(1 << 16);
    let (head, tail) = b.split_at(b.len() / 2);
    f.push(head).is_ok() && f.push(tail).is_ok()
}

fn pipeline_chunk(b: &[u8]) -> bool {
    thread_local! {
        static PIPELINE: Pipeline = Pipeline::new(PipelineConfig::default(), Arc::new(ThumbprintTable::new(4)));
    }
    PIPELINE.with(|p| p.process_chunk(b).verdict.is_allow())
}

const TARGETS: [Target; 11] = [
    ("decode_chunk", |b| decode_chunk(b).is_ok()),
    ("decode_opn", |b| decode_opn(b).is_ok()),
    ("hello", |b| Hello::decode(b).is_ok()),
    ("acknowledge", |b| Acknowledge::decode(b).is_ok()),
    ("error", |b| ErrorMessage::decode(b).is_ok()),
    ("symmetric", |b| SymmetricChunk::decode(b).is_ok()),
    ("extract_certificate", |b| extract_certificate(b, 100).is_ok()),
    ("parse_packet", |b| parse_packet(b, DEFAULT_OPCUA_PORT).is_ok()),
    ("certificate_action", |b| CertificateAction::decode(b).is_ok()),
    ("framer", framer),
    ("pipeline", pipeline_chunk),
];

/// A fuzz input: pure noise, or a valid chunk with some bytes flipped,
/// truncated or with its size field rewritten.
pub fn fuzz_input(rng: &mut impl Rng) -> Vec<u8> {
    match rng.random_range(0..4) {
        0 => {
            let mut b = vec![0u8; rng.random_range(0..600)];
            rng.fill_bytes(&mut b);
            b
        }
        1 => {
            let mut b = random_chunk(rng);
            for _ in 0..rng.random_range(1..8) {
                let i = rng.random_range(0..b.len());
                b[i] = rng.random();
            }
            b
        }
        2 => {
            let mut b = random_chunk(rng);
            b.truncate(rng.random_range(0..=b.len()));
            b
        }
        _ => {
            let mut b = random_chunk(rng);
            let at = rng.random_range(0..b.len().saturating_sub(3).max(1));
            let v: u32 = if rng.random_bool(0.5) { rng.random() } else { rng.random_range(0..64) };
            let end = (at + 4).min(b.len());
            b[at..end].copy_from_slice(&v.to_le_bytes()[..end - at]);
            b
        }
    }
}

/// Feeds `inputs` generated inputs to every decode path and counts how each
/// call ended.
pub fn fuzz_decoders(inputs: u64, seed: u64) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport::default();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for _ in 0..inputs {
        let input = fuzz_input(&mut rng);
        report.inputs += 1;
        for (name, f) in TARGETS {
            match catch_unwind(AssertUnwindSafe(|| f(&input))) {
                Ok(true) => report.accepted += 1,
                Ok(false) => report.rejected += 1,
                Err(_) => {
                    report.panics += 1;
                    report.first_panic.get_or_insert_with(|| (name.to_string(), input.clone()));
                }
            }
        }
    }
    std::panic::set_hook(hook);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_framed_then_noise() {
        let c = mixed_traffic(100_000, 1000, 3);
        assert!(c.len() >= 101_000);
        let mut f = ChunkFramer::new(1 << 20);
        let body = &c[..c.len() - 1000];
        let units = f.push(body).unwrap();
        assert_eq!(units.iter().map(|u| u.bytes().len()).sum::<usize>(), body.len());
        assert_eq!(mixed_traffic(5000, 10, 3), mixed_traffic(5000, 10, 3));
    }

    #[test]
    fn small_fuzz_run_is_clean() {
        let r = fuzz_decoders(2000, 5);
        assert_eq!(r.panics, 0, "{:?}", r.first_panic);
        assert_eq!(r.accepted + r.rejected, 2000 * TARGETS.len() as u64);
        assert!(r.accepted > 0 && r.rejected > 0);
    }
}
