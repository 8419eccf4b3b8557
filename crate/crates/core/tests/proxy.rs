use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use trustgate_core::cert::hash_thumbprint;
use trustgate_core::codec::{encode_opn, AsymmetricSecurityHeader, MessageType, OpnMessage, SymmetricChunk};
use trustgate_core::dataplane::proxy::{spawn_proxy, ProxyContext, ProxyHandle, DEFAULT_SILENT_HOLD};
use trustgate_core::dataplane::{
    event_channel, metrics_channel, DropMode, MetricsCollector, Pipeline, PipelineConfig, ThumbprintTable,
};

/// Accepts one connection, records what arrives and echoes it back.
async fn echo_server() -> (SocketAddr, oneshot::Receiver<Vec<u8>>) {
    let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = l.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    tokio::spawn(async move {
        let (mut s, _) = l.accept().await.unwrap();
        let mut seen = Vec::new();
        let mut buf = vec![0u8; 65536];
        loop {
            match s.read(&mut buf).await {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    seen.extend_from_slice(&buf[..n]);
                    if s.write_all(&buf[..n]).await.is_err() {
                        break;
                    }
                }
            }
        }
        let _ = tx.send(seen);
    });
    (addr, rx)
}

async fn proxy(upstream: SocketAddr, config: PipelineConfig, table: Arc<ThumbprintTable>) -> (ProxyHandle, MetricsCollector) {
    let (metrics, collector) = metrics_channel();
    let (verdicts, _log) = event_channel();
    let ctx = ProxyContext {
        pipeline: Pipeline::new(config, table),
        metrics,
        verdicts,
        capture: None,
        silent_hold: DEFAULT_SILENT_HOLD,
    };
    let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
    (spawn_proxy(l, upstream, ctx).unwrap(), collector)
}

fn opn(cert: &[u8]) -> Vec<u8> {
    let sh = AsymmetricSecurityHeader::new("", Some(cert.to_vec()), None);
    encode_opn(&OpnMessage::new(0, sh, 1, 1, vec![7; 32])).unwrap()
}

fn msg(n: usize) -> Vec<u8> {
    SymmetricChunk::new(MessageType::Message, 1, 1, 2, 2, vec![0xEE; n]).encode().unwrap()
}

async fn send_and_echo(addr: SocketAddr, data: &[u8]) -> std::io::Result<Vec<u8>> {
    let s = TcpStream::connect(addr).await?;
    let (mut rd, mut wr) = s.into_split();
    let data = data.to_vec();
    let w = tokio::spawn(async move {
        wr.write_all(&data).await?;
        wr.shutdown().await
    });
    let mut back = Vec::new();
    rd.read_to_end(&mut back).await?;
    w.await.unwrap()?;
    Ok(back)
}

#[tokio::test]
async fn disabled_validation_is_transparent_even_after_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut data = Vec::new();
    for i in 0..200 {
        data.extend(if i % 5 == 0 { opn(&[i as u8; 300]) } else { msg(rng.random_range(0..4000)) });
    }
    let mut noise = vec![0u8; 100_000];
    rng.fill_bytes(&mut noise);
    data.extend(noise);

    let (up, seen) = echo_server().await;
    let config = PipelineConfig {
        validation_enabled: false,
        ..PipelineConfig::default()
    };
    let (p, _m) = proxy(up, config, Arc::new(ThumbprintTable::new(1))).await;
    let back = send_and_echo(p.local_addr(), &data).await.unwrap();
    assert_eq!(seen.await.unwrap(), data);
    assert_eq!(back, data);
}

#[tokio::test]
async fn untrusted_opn_is_reset_before_reaching_the_server() {
    let (up, seen) = echo_server().await;
    let config = PipelineConfig {
        drop_mode: DropMode::Reset,
        ..PipelineConfig::default()
    };
    let (p, _m) = proxy(up, config, Arc::new(ThumbprintTable::new(4))).await;
    let mut data = msg(100);
    data.extend(opn(b"not trusted"));
    let r = tokio::time::timeout(Duration::from_secs(3), send_and_echo(p.local_addr(), &data))
        .await
        .expect("client sees the reset");
    assert_eq!(r.unwrap_err().kind(), std::io::ErrorKind::ConnectionReset);
    // the MSG ahead of the OPN may or may not have been flushed; the OPN never is
    let seen = tokio::time::timeout(Duration::from_secs(2), seen).await.unwrap().unwrap();
    assert!(msg(100).starts_with(&seen), "{} bytes reached the server", seen.len());
}

#[tokio::test]
async fn trusted_opn_passes_and_is_measured() {
    let cert = b"trusted certificate";
    let table = Arc::new(ThumbprintTable::new(4));
    table.install(hash_thumbprint(cert).unwrap()).unwrap();
    let (up, seen) = echo_server().await;
    let (p, metrics) = proxy(up, PipelineConfig::default(), table).await;
    let mut data = opn(cert);
    data.extend(msg(10));
    let back = send_and_echo(p.local_addr(), &data).await.unwrap();
    assert_eq!(seen.await.unwrap(), data);
    // the echoed OPN is checked again on the way back
    assert_eq!(back, data);
    tokio::time::sleep(Duration::from_millis(20)).await;
    let records = metrics.take();
    assert_eq!(records.iter().filter(|r| r.tagged).count(), 2);
    assert!(records.iter().filter(|r| r.tagged).all(|r| r.dequeue_ns.is_some()));
}
