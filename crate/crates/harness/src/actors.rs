//! Attackers. Rogue servers and rogue clients are ordinary endpoints holding
//! untrusted or stolen identities; the middleperson needs its own relay.

use std::net::SocketAddr;
use std::sync::atomic::AtomicU32;
use std::sync::{Arc, Mutex};

use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::endpoint::{handshake, serve_connection, ClientConfig, HandshakeResult, ServerConfig, ServerStats};
use crate::identity::Identity;

#[derive(Debug, Clone)]
pub enum Middleperson {
    /// Copies bytes unmodified in both directions.
    Passive,
    /// Terminates the client's channel as a server and opens its own channel
    /// upstream as a client, each with a forged identity.
    Impersonate { as_server: Identity, as_client: Identity },
}

pub struct MiddlepersonHandle {
    addr: SocketAddr,
    /// Outcomes of the upstream channels the actor tried to open.
    pub upstream: Arc<Mutex<Vec<HandshakeResult>>>,
    pub downstream: Arc<ServerStats>,
    task: JoinHandle<()>,
}

impl MiddlepersonHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn upstream_results(&self) -> Vec<HandshakeResult> {
        self.upstream.lock().expect("results lock").clone()
    }
}

impl Drop for MiddlepersonHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub fn spawn_middleperson(listener: TcpListener, upstream: SocketAddr, mode: Middleperson) -> std::io::Result<MiddlepersonHandle> {
    let addr = listener.local_addr()?;
    let results = Arc::new(Mutex::new(Vec::new()));
    let stats = Arc::new(ServerStats::default());
    let (r, st) = (results.clone(), stats.clone());
    let ids = Arc::new(AtomicU32::new(1));
    let task = tokio::spawn(async move {
        while let Ok((stream, _)) = listener.accept().await {
            let _ = stream.set_nodelay(true);
            match &mode {
                Middleperson::Passive => {
                    tokio::spawn(forward(stream, upstream));
                }
                Middleperson::Impersonate { as_server, as_client } => {
                    let client = ClientConfig::new(as_client.clone());
                    let r = r.clone();
                    tokio::spawn(async move {
                        let result = handshake(upstream, &client).await;
                        r.lock().expect("results lock").push(result);
                    });
                    let server = ServerConfig::new(as_server.clone());
                    let (st, ids) = (st.clone(), ids.clone());
                    tokio::spawn(async move {
                        let _ = serve_connection(stream, &server, &st, &ids).await;
                    });
                }
            }
        }
    });
    Ok(MiddlepersonHandle {
        addr,
        upstream: results,
        downstream: stats,
        task,
    })
}

async fn forward(mut client: TcpStream, upstream: SocketAddr) {
    let Ok(mut server) = TcpStream::connect(upstream).await else { return };
    let _ = server.set_nodelay(true);
    let _ = tokio::io::copy_bidirectional(&mut client, &mut server).await;
}
