//! TCP relay that delays every burst it carries by a sampled one-way latency.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use socket2::SockRef;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tokio::time::{sleep_until, Instant};
use trustgate_core::ledger::LinkProfile;

pub struct LinkHandle {
    addr: SocketAddr,
    task: JoinHandle<()>,
}

impl LinkHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for LinkHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Each accepted connection gets its own RNG stream derived from `seed`.
pub fn spawn_link(listener: TcpListener, upstream: SocketAddr, profile: LinkProfile, seed: u64) -> std::io::Result<LinkHandle> {
    let addr = listener.local_addr()?;
    let task = tokio::spawn(async move {
        let mut n = 0u64;
        while let Ok((client, _)) = listener.accept().await {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n);
            n += 1;
            tokio::spawn(async move {
                if let Err(e) = relay(client, upstream, profile, rng).await {
                    tracing::debug!(error = %e, "link connection ended");
                }
            });
        }
    });
    Ok(LinkHandle { addr, task })
}

/// `None` marks end of stream.
type Queue = VecDeque<(Instant, Option<Vec<u8>>)>;

fn enqueue(q: &mut Queue, last: &mut Instant, delay: Duration, item: Option<Vec<u8>>) {
    let at = (Instant::now() + delay).max(*last);
    *last = at;
    q.push_back((at, item));
}

fn reset(halves: [&OwnedWriteHalf; 2]) {
    for h in halves {
        let _ = SockRef::from(h.as_ref()).set_linger(Some(Duration::ZERO));
    }
}

async fn deliver(w: &mut OwnedWriteHalf, item: Option<Vec<u8>>) -> std::io::Result<()> {
    match item {
        Some(b) => w.write_all(&b).await,
        None => w.shutdown().await,
    }
}

async fn relay(client: TcpStream, upstream: SocketAddr, profile: LinkProfile, mut rng: ChaCha8Rng) -> std::io::Result<()> {
    let server = TcpStream::connect(upstream).await?;
    client.set_nodelay(true)?;
    server.set_nodelay(true)?;
    let (mut cr, mut cw) = client.into_split();
    let (mut sr, mut sw) = server.into_split();
    let (mut up, mut down) = (Queue::new(), Queue::new());
    let (mut up_last, mut down_last) = (Instant::now(), Instant::now());
    let (mut cbuf, mut sbuf) = (vec![0u8; 64 * 1024], vec![0u8; 64 * 1024]);
    let (mut c_open, mut s_open) = (true, true);
    let far = Instant::now() + Duration::from_secs(86_400);

    loop {
        if !c_open && !s_open && up.is_empty() && down.is_empty() {
            return Ok(());
        }
        let next_up = up.front().map_or(far, |x| x.0);
        let next_down = down.front().map_or(far, |x| x.0);
        let result = tokio::select! {
            r = cr.read(&mut cbuf), if c_open => match r {
                Ok(0) => {
                    c_open = false;
                    enqueue(&mut up, &mut up_last, profile.sample(&mut rng), None);
                    Ok(())
                }
                Ok(n) => {
                    enqueue(&mut up, &mut up_last, profile.sample(&mut rng), Some(cbuf[..n].to_vec()));
                    Ok(())
                }
                Err(e) => Err(e),
            },
            r = sr.read(&mut sbuf), if s_open => match r {
                Ok(0) => {
                    s_open = false;
                    enqueue(&mut down, &mut down_last, profile.sample(&mut rng), None);
                    Ok(())
                }
                Ok(n) => {
                    enqueue(&mut down, &mut down_last, profile.sample(&mut rng), Some(sbuf[..n].to_vec()));
                    Ok(())
                }
                Err(e) => Err(e),
            },
            _ = sleep_until(next_up), if !up.is_empty() => {
                let (_, item) = up.pop_front().expect("non-empty");
                deliver(&mut sw, item).await
            }
            _ = sleep_until(next_down), if !down.is_empty() => {
                let (_, item) = down.pop_front().expect("non-empty");
                deliver(&mut cw, item).await
            }
        };
        if let Err(e) = result {
            // A reset on one side is passed on to the other.
            reset([&cw, &sw]);
            return Err(e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    async fn echo() -> SocketAddr {
        let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = l.local_addr().unwrap();
        tokio::spawn(async move {
            while let Ok((mut s, _)) = l.accept().await {
                tokio::spawn(async move {
                    let (mut r, mut w) = s.split();
                    let _ = tokio::io::copy(&mut r, &mut w).await;
                });
            }
        });
        addr
    }

    #[tokio::test]
    async fn round_trip_pays_both_directions() {
        let upstream = echo().await;
        let link = spawn_link(
            TcpListener::bind("127.0.0.1:0").await.unwrap(),
            upstream,
            LinkProfile::new(Duration::from_millis(40), 0.0),
            1,
        )
        .unwrap();
        let mut s = TcpStream::connect(link.local_addr()).await.unwrap();
        let start = Instant::now();
        s.write_all(b"ping").await.unwrap();
        let mut buf = [0u8; 4];
        s.read_exact(&mut buf).await.unwrap();
        assert_eq!(&buf, b"ping");
        assert!(start.elapsed() >= Duration::from_millis(80));
    }

    #[tokio::test]
    async fn order_is_preserved_under_jitter() {
        let upstream = echo().await;
        let link = spawn_link(
            TcpListener::bind("127.0.0.1:0").await.unwrap(),
            upstream,
            LinkProfile::new(Duration::from_millis(5), 0.9),
            2,
        )
        .unwrap();
        let mut s = TcpStream::connect(link.local_addr()).await.unwrap();
        let sent: Vec<u8> = (0..=255).collect();
        for b in &sent {
            s.write_all(&[*b]).await.unwrap();
        }
        let mut got = vec![0u8; sent.len()];
        s.read_exact(&mut got).await.unwrap();
        assert_eq!(got, sent);
    }
}
