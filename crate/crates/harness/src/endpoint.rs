//! Minimal OPC UA client and server. Only framing is real OPC UA; service
//! bodies are small JSON documents because nothing in the path inspects them.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tokio::time::Instant;
use trustgate_core::cert::hash_thumbprint;
use trustgate_core::codec::{
    decode_chunk, decode_message_header, encode_opn, Acknowledge, AsymmetricSecurityHeader, Chunk, ErrorMessage,
    Hello, MessageType, OpnMessage, SymmetricChunk, MESSAGE_HEADER_LEN, SECURITY_POLICY_BASIC256SHA256,
    is_recommended_policy,
};

use crate::identity::{verify_with_certificate, Identity};
use crate::HarnessError;

const MAX_CHUNK: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    GetEndpoints,
    OpenSecureChannel,
    CreateSession,
    ActivateSession,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Established,
    RejectedAtGateway,
    Timeout,
    ProtocolError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandshakeResult {
    pub outcome: Outcome,
    /// Client-side, monotonic.
    pub duration_ms: f64,
    pub phase_reached: Phase,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum RequestType {
    Issue,
    Renew,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDescription {
    pub endpoint_url: String,
    #[serde(with = "hex::serde")]
    pub server_certificate: Vec<u8>,
    pub security_mode: String,
    pub security_policy_uri: String,
    pub user_identity_tokens: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "service")]
enum Service {
    GetEndpointsRequest {
        endpoint_url: String,
    },
    GetEndpointsResponse {
        endpoints: Vec<EndpointDescription>,
    },
    OpenRequest {
        request_type: RequestType,
        #[serde(with = "hex::serde")]
        client_nonce: Vec<u8>,
        #[serde(with = "hex::serde")]
        proof: Vec<u8>,
    },
    OpenResponse {
        channel_id: u32,
        token_id: u32,
        #[serde(with = "hex::serde")]
        server_nonce: Vec<u8>,
        #[serde(with = "hex::serde")]
        proof: Vec<u8>,
    },
    CreateSessionRequest {
        #[serde(with = "hex::serde")]
        client_nonce: Vec<u8>,
    },
    CreateSessionResponse {
        session_id: u32,
        authentication_token: u32,
        #[serde(with = "hex::serde")]
        server_nonce: Vec<u8>,
        #[serde(with = "hex::serde")]
        proof: Vec<u8>,
    },
    ActivateSessionRequest {
        authentication_token: u32,
        #[serde(with = "hex::serde")]
        client_signature: Vec<u8>,
    },
    ActivateSessionResponse {
        activated: bool,
    },
}

impl Service {
    fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("service bodies serialize")
    }

    fn from_bytes(b: &[u8]) -> Option<Service> {
        serde_json::from_slice(b).ok()
    }
}

fn transcript(label: &str, parts: &[&[u8]]) -> Vec<u8> {
    let mut m = label.as_bytes().to_vec();
    for p in parts {
        m.extend_from_slice(p);
    }
    m
}

fn nonce() -> Vec<u8> {
    rand::random::<[u8; 32]>().to_vec()
}

#[derive(Debug)]
enum Fail {
    Reset(String),
    Timeout,
    Protocol(String),
}

impl Fail {
    fn outcome(&self) -> Outcome {
        match self {
            Fail::Reset(_) => Outcome::RejectedAtGateway,
            Fail::Timeout => Outcome::Timeout,
            Fail::Protocol(_) => Outcome::ProtocolError,
        }
    }

    fn detail(&self) -> Option<String> {
        match self {
            Fail::Reset(s) | Fail::Protocol(s) => Some(s.clone()),
            Fail::Timeout => None,
        }
    }
}

fn io_fail(e: std::io::Error) -> Fail {
    use std::io::ErrorKind::*;
    match e.kind() {
        ConnectionReset | ConnectionAborted | UnexpectedEof | BrokenPipe => Fail::Reset(e.to_string()),
        _ => Fail::Protocol(e.to_string()),
    }
}

async fn read_raw(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut buf = vec![0u8; MESSAGE_HEADER_LEN];
    stream.read_exact(&mut buf).await?;
    let header = decode_message_header(&buf)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    let size = header.message_size as usize;
    if !(MESSAGE_HEADER_LEN..=MAX_CHUNK).contains(&size) {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "chunk size out of range"));
    }
    buf.resize(size, 0);
    stream.read_exact(&mut buf[MESSAGE_HEADER_LEN..]).await?;
    Ok(buf)
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub identity: Identity,
    pub policy_uri: String,
    pub endpoint_url: String,
    pub timeout: Duration,
}

impl ClientConfig {
    pub fn new(identity: Identity) -> Self {
        ClientConfig {
            identity,
            policy_uri: SECURITY_POLICY_BASIC256SHA256.to_owned(),
            endpoint_url: "opc.tcp://plant.local:4840/".to_owned(),
            timeout: Duration::from_secs(2),
        }
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }
}

/// An established secure channel with an activated session.
pub struct Session {
    stream: TcpStream,
    config: ClientConfig,
    server_certificate: Vec<u8>,
    channel_id: u32,
    token_id: u32,
    seq: u32,
    deadline: Instant,
}

impl Session {
    async fn send(&mut self, bytes: &[u8]) -> Result<(), Fail> {
        tokio::time::timeout_at(self.deadline, self.stream.write_all(bytes))
            .await
            .map_err(|_| Fail::Timeout)?
            .map_err(io_fail)
    }

    async fn recv(&mut self) -> Result<Chunk, Fail> {
        let raw = tokio::time::timeout_at(self.deadline, read_raw(&mut self.stream))
            .await
            .map_err(|_| Fail::Timeout)?
            .map_err(io_fail)?;
        match decode_chunk(&raw).map_err(|e| Fail::Protocol(e.to_string()))? {
            Chunk::Error(e) => Err(Fail::Protocol(format!(
                "server error 0x{:08X}: {}",
                e.error,
                e.reason.as_str().unwrap_or("")
            ))),
            c => Ok(c),
        }
    }

    async fn call(&mut self, service: Service) -> Result<Service, Fail> {
        self.seq += 1;
        let msg = SymmetricChunk::new(
            MessageType::Message,
            self.channel_id,
            self.token_id,
            self.seq,
            self.seq,
            service.to_bytes(),
        );
        self.send(&msg.encode().map_err(|e| Fail::Protocol(e.to_string()))?)
            .await?;
        match self.recv().await? {
            Chunk::Symmetric(c) => Service::from_bytes(&c.body).ok_or_else(|| Fail::Protocol("bad service body".into())),
            other => Err(Fail::Protocol(format!("expected MSG, got {:?}", other.message_type()))),
        }
    }

    async fn open(&mut self, request_type: RequestType) -> Result<(), Fail> {
        let client_nonce = nonce();
        let server_tp = hash_thumbprint(&self.server_certificate).map_err(|e| Fail::Protocol(e.to_string()))?;
        let proof = self
            .config
            .identity
            .sign(&transcript("opn-request", &[&client_nonce, server_tp.as_bytes()]));
        let body = Service::OpenRequest {
            request_type,
            client_nonce: client_nonce.clone(),
            proof: proof.to_vec(),
        };
        self.seq += 1;
        let opn = OpnMessage::new(
            self.channel_id,
            AsymmetricSecurityHeader::new(
                &self.config.policy_uri,
                Some(self.config.identity.der().to_vec()),
                Some(server_tp.0),
            ),
            self.seq,
            self.seq,
            body.to_bytes(),
        );
        self.send(&encode_opn(&opn).map_err(|e| Fail::Protocol(e.to_string()))?)
            .await?;
        let resp = match self.recv().await? {
            Chunk::Open(o) => o,
            other => return Err(Fail::Protocol(format!("expected OPN, got {:?}", other.message_type()))),
        };
        let sender = resp.sender_certificate().unwrap_or_default();
        if sender != self.server_certificate.as_slice() {
            return Err(Fail::Protocol("server certificate differs from the endpoint's".into()));
        }
        let Some(Service::OpenResponse {
            channel_id,
            token_id,
            server_nonce,
            proof,
        }) = Service::from_bytes(&resp.body)
        else {
            return Err(Fail::Protocol("bad OPN response body".into()));
        };
        let msg = transcript("opn-response", &[&client_nonce, &server_nonce]);
        if !verify_with_certificate(sender, &msg, &proof) {
            return Err(Fail::Protocol("server proof of possession failed".into()));
        }
        self.channel_id = channel_id;
        self.token_id = token_id;
        Ok(())
    }

    /// Reopens the channel with a fresh token, as done before the token expires.
    pub async fn renew(&mut self) -> Result<(), Outcome> {
        self.deadline = Instant::now() + self.config.timeout;
        self.open(RequestType::Renew).await.map_err(|f| f.outcome())
    }

    pub async fn close(mut self) {
        self.seq += 1;
        let clo = SymmetricChunk::new(
            MessageType::CloseSecureChannel,
            self.channel_id,
            self.token_id,
            self.seq,
            self.seq,
            Vec::new(),
        );
        if let Ok(bytes) = clo.encode() {
            let _ = self.stream.write_all(&bytes).await;
        }
        let _ = self.stream.shutdown().await;
    }
}

async fn drive(addr: SocketAddr, config: &ClientConfig, phase: &mut Phase) -> Result<Session, Fail> {
    let deadline = Instant::now() + config.timeout;
    let stream = tokio::time::timeout_at(deadline, TcpStream::connect(addr))
        .await
        .map_err(|_| Fail::Timeout)?
        .map_err(|e| Fail::Protocol(format!("connect: {e}")))?;
    stream.set_nodelay(true).map_err(io_fail)?;
    let mut s = Session {
        stream,
        config: config.clone(),
        server_certificate: Vec::new(),
        channel_id: 0,
        token_id: 0,
        seq: 0,
        deadline,
    };

    *phase = Phase::GetEndpoints;
    if !is_recommended_policy(&config.policy_uri) {
        return Err(Fail::Protocol(format!("policy {} is not allowed", config.policy_uri)));
    }
    let hello = Hello::new(&config.endpoint_url).encode().map_err(|e| Fail::Protocol(e.to_string()))?;
    s.send(&hello).await?;
    match s.recv().await? {
        Chunk::Acknowledge(_) => {}
        other => return Err(Fail::Protocol(format!("expected ACK, got {:?}", other.message_type()))),
    }
    let endpoints = match s
        .call(Service::GetEndpointsRequest {
            endpoint_url: config.endpoint_url.clone(),
        })
        .await?
    {
        Service::GetEndpointsResponse { endpoints } => endpoints,
        _ => return Err(Fail::Protocol("expected GetEndpoints response".into())),
    };
    let endpoint = endpoints
        .into_iter()
        .find(|e| e.security_policy_uri == config.policy_uri && e.security_mode == "SignAndEncrypt")
        .ok_or_else(|| Fail::Protocol("no matching endpoint".into()))?;
    s.server_certificate = endpoint.server_certificate;

    *phase = Phase::OpenSecureChannel;
    s.open(RequestType::Issue).await?;

    *phase = Phase::CreateSession;
    let client_nonce = nonce();
    let (token, server_nonce) = match s
        .call(Service::CreateSessionRequest {
            client_nonce: client_nonce.clone(),
        })
        .await?
    {
        Service::CreateSessionResponse {
            authentication_token,
            server_nonce,
            proof,
            ..
        } => {
            let msg = transcript("create-session", &[&client_nonce, &server_nonce]);
            if !verify_with_certificate(&s.server_certificate, &msg, &proof) {
                return Err(Fail::Protocol("session proof failed".into()));
            }
            (authentication_token, server_nonce)
        }
        _ => return Err(Fail::Protocol("expected CreateSession response".into())),
    };

    *phase = Phase::ActivateSession;
    let signature = config.identity.sign(&transcript("activate-session", &[&server_nonce]));
    match s
        .call(Service::ActivateSessionRequest {
            authentication_token: token,
            client_signature: signature.to_vec(),
        })
        .await?
    {
        Service::ActivateSessionResponse { activated: true } => Ok(s),
        _ => Err(Fail::Protocol("session not activated".into())),
    }
}

/// Runs the four steps and keeps the session open.
pub async fn connect(addr: SocketAddr, config: &ClientConfig) -> Result<Session, HandshakeResult> {
    let start = Instant::now();
    let mut phase = Phase::GetEndpoints;
    drive(addr, config, &mut phase).await.map_err(|f| HandshakeResult {
        outcome: f.outcome(),
        duration_ms: start.elapsed().as_secs_f64() * 1e3,
        phase_reached: phase,
        detail: f.detail(),
    })
}

/// Runs the four steps, then closes the channel.
pub async fn handshake(addr: SocketAddr, config: &ClientConfig) -> HandshakeResult {
    let start = Instant::now();
    match connect(addr, config).await {
        Ok(session) => {
            let duration_ms = start.elapsed().as_secs_f64() * 1e3;
            session.close().await;
            HandshakeResult {
                outcome: Outcome::Established,
                duration_ms,
                phase_reached: Phase::ActivateSession,
                detail: None,
            }
        }
        Err(r) => r,
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub identity: Identity,
    pub policy_uri: String,
    pub endpoint_url: String,
}

impl ServerConfig {
    pub fn new(identity: Identity) -> Self {
        ServerConfig {
            identity,
            policy_uri: SECURITY_POLICY_BASIC256SHA256.to_owned(),
            endpoint_url: "opc.tcp://plant.local:4840/".to_owned(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub channels_opened: AtomicUsize,
    pub sessions_activated: AtomicUsize,
    pub rejected: AtomicUsize,
}

pub struct ServerHandle {
    addr: SocketAddr,
    pub stats: Arc<ServerStats>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn sessions_activated(&self) -> usize {
        self.stats.sessions_activated.load(Ordering::Relaxed)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub fn run_server(listener: TcpListener, config: ServerConfig) -> Result<ServerHandle, HarnessError> {
    if !is_recommended_policy(&config.policy_uri) {
        return Err(HarnessError::Setup(format!("policy {} is not allowed", config.policy_uri)));
    }
    let addr = listener.local_addr()?;
    let stats = Arc::new(ServerStats::default());
    let config = Arc::new(config);
    let ids = Arc::new(AtomicU32::new(1));
    let st = stats.clone();
    let task = tokio::spawn(async move {
        while let Ok((stream, _)) = listener.accept().await {
            let _ = stream.set_nodelay(true);
            let (config, stats, ids) = (config.clone(), st.clone(), ids.clone());
            tokio::spawn(async move {
                if let Err(reason) = serve_connection(stream, &config, &stats, &ids).await {
                    tracing::debug!(%reason, "server connection ended");
                }
            });
        }
    });
    Ok(ServerHandle { addr, stats, task })
}

async fn reply_error(stream: &mut TcpStream, stats: &ServerStats, code: u32, reason: &str) -> Result<(), String> {
    stats.rejected.fetch_add(1, Ordering::Relaxed);
    if let Ok(bytes) = ErrorMessage::new(code, reason).encode() {
        let _ = stream.write_all(&bytes).await;
    }
    let _ = stream.shutdown().await;
    Err(reason.to_owned())
}

pub(crate) async fn serve_connection(
    mut stream: TcpStream,
    config: &ServerConfig,
    stats: &ServerStats,
    ids: &AtomicU32,
) -> Result<(), String> {
    let own_tp = config.identity.thumbprint();
    let mut client_cert: Option<Vec<u8>> = None;
    let mut channel_id = 0u32;
    let mut token_id = 0u32;
    let mut seq = 0u32;
    let mut session_nonce: Option<Vec<u8>> = None;
    let mut auth_token = 0u32;

    loop {
        let raw = match read_raw(&mut stream).await {
            Ok(r) => r,
            Err(_) => return Ok(()),
        };
        let chunk = match decode_chunk(&raw) {
            Ok(c) => c,
            Err(e) => return reply_error(&mut stream, stats, ErrorMessage::BAD_TCP_MESSAGE_TYPE_INVALID, &e.to_string()).await,
        };
        let reply: Vec<u8> = match chunk {
            Chunk::Hello(h) => Acknowledge::for_hello(&h).encode().map_err(|e| e.to_string())?,
            Chunk::Open(opn) => {
                let Some(cert) = opn.sender_certificate().map(<[u8]>::to_vec) else {
                    return reply_error(&mut stream, stats, ErrorMessage::BAD_CERTIFICATE_INVALID, "no client certificate").await;
                };
                if opn.receiver_thumbprint() != Some(own_tp.0) {
                    return reply_error(&mut stream, stats, ErrorMessage::BAD_CERTIFICATE_INVALID, "not addressed to this server").await;
                }
                let Some(Service::OpenRequest {
                    request_type,
                    client_nonce,
                    proof,
                }) = Service::from_bytes(&opn.body)
                else {
                    return reply_error(&mut stream, stats, ErrorMessage::BAD_SECURITY_CHECKS_FAILED, "bad OPN body").await;
                };
                let msg = transcript("opn-request", &[&client_nonce, own_tp.as_bytes()]);
                if !verify_with_certificate(&cert, &msg, &proof) {
                    return reply_error(&mut stream, stats, ErrorMessage::BAD_SECURITY_CHECKS_FAILED, "client proof failed").await;
                }
                match (request_type, &client_cert) {
                    (RequestType::Issue, None) => {
                        channel_id = ids.fetch_add(1, Ordering::Relaxed);
                        token_id = 1;
                        stats.channels_opened.fetch_add(1, Ordering::Relaxed);
                    }
                    (RequestType::Renew, Some(c)) if *c == cert => token_id += 1,
                    _ => {
                        return reply_error(&mut stream, stats, ErrorMessage::BAD_SECURITY_CHECKS_FAILED, "unexpected OPN").await
                    }
                }
                let client_tp = hash_thumbprint(&cert).map_err(|e| e.to_string())?;
                client_cert = Some(cert);
                let server_nonce = nonce();
                let proof = config
                    .identity
                    .sign(&transcript("opn-response", &[&client_nonce, &server_nonce]));
                let body = Service::OpenResponse {
                    channel_id,
                    token_id,
                    server_nonce,
                    proof: proof.to_vec(),
                };
                seq += 1;
                let resp = OpnMessage::new(
                    channel_id,
                    AsymmetricSecurityHeader::new(
                        &config.policy_uri,
                        Some(config.identity.der().to_vec()),
                        Some(client_tp.0),
                    ),
                    seq,
                    opn.request_id,
                    body.to_bytes(),
                );
                encode_opn(&resp).map_err(|e| e.to_string())?
            }
            Chunk::Symmetric(c) if c.header.msg_type == MessageType::CloseSecureChannel => {
                let _ = stream.shutdown().await;
                return Ok(());
            }
            Chunk::Symmetric(c) => {
                let response = match Service::from_bytes(&c.body) {
                    Some(Service::GetEndpointsRequest { endpoint_url }) => Service::GetEndpointsResponse {
                        endpoints: vec![EndpointDescription {
                            endpoint_url,
                            server_certificate: config.identity.der().to_vec(),
                            security_mode: "SignAndEncrypt".into(),
                            security_policy_uri: config.policy_uri.clone(),
                            user_identity_tokens: vec!["Anonymous".into()],
                        }],
                    },
                    Some(Service::CreateSessionRequest { client_nonce }) if client_cert.is_some() => {
                        let server_nonce = nonce();
                        auth_token = ids.fetch_add(1, Ordering::Relaxed);
                        let proof = config
                            .identity
                            .sign(&transcript("create-session", &[&client_nonce, &server_nonce]));
                        session_nonce = Some(server_nonce.clone());
                        Service::CreateSessionResponse {
                            session_id: auth_token,
                            authentication_token: auth_token,
                            server_nonce,
                            proof: proof.to_vec(),
                        }
                    }
                    Some(Service::ActivateSessionRequest {
                        authentication_token,
                        client_signature,
                    }) => {
                        let ok = match (&client_cert, &session_nonce) {
                            (Some(cert), Some(n)) => {
                                authentication_token == auth_token
                                    && verify_with_certificate(cert, &transcript("activate-session", &[n]), &client_signature)
                            }
                            _ => false,
                        };
                        if ok {
                            stats.sessions_activated.fetch_add(1, Ordering::Relaxed);
                        }
                        Service::ActivateSessionResponse { activated: ok }
                    }
                    _ => {
                        return reply_error(&mut stream, stats, ErrorMessage::BAD_TCP_MESSAGE_TYPE_INVALID, "unexpected request").await
                    }
                };
                seq += 1;
                SymmetricChunk::new(MessageType::Message, channel_id, token_id, seq, c.request_id, response.to_bytes())
                    .encode()
                    .map_err(|e| e.to_string())?
            }
            Chunk::Acknowledge(_) | Chunk::Error(_) => {
                return reply_error(&mut stream, stats, ErrorMessage::BAD_TCP_MESSAGE_TYPE_INVALID, "unexpected message").await
            }
        };
        stream.write_all(&reply).await.map_err(|e| e.to_string())?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    async fn server(id: Identity) -> ServerHandle {
        run_server(TcpListener::bind("127.0.0.1:0").await.unwrap(), ServerConfig::new(id)).unwrap()
    }

    #[tokio::test]
    async fn direct_handshake_establishes() {
        let s = server(Identity::generate("server", [1; 32]).unwrap()).await;
        let c = ClientConfig::new(Identity::generate("client", [2; 32]).unwrap());
        let r = handshake(s.local_addr(), &c).await;
        assert_eq!(r.outcome, Outcome::Established, "{r:?}");
        assert_eq!(r.phase_reached, Phase::ActivateSession);
        assert_eq!(s.sessions_activated(), 1);
    }

    #[tokio::test]
    async fn stolen_server_certificate_fails_proof() {
        let real = Identity::generate("server", [1; 32]).unwrap();
        let s = server(real.with_stolen_certificate("rogue", [9; 32])).await;
        let c = ClientConfig::new(Identity::generate("client", [2; 32]).unwrap());
        let r = handshake(s.local_addr(), &c).await;
        assert_eq!(r.outcome, Outcome::ProtocolError);
        assert_eq!(r.phase_reached, Phase::OpenSecureChannel);
    }

    #[tokio::test]
    async fn stolen_client_certificate_is_refused_by_server() {
        let s = server(Identity::generate("server", [1; 32]).unwrap()).await;
        let thief = Identity::generate("client", [2; 32]).unwrap().with_stolen_certificate("x", [3; 32]);
        let r = handshake(s.local_addr(), &ClientConfig::new(thief)).await;
        assert_eq!(r.outcome, Outcome::ProtocolError);
        assert_eq!(s.sessions_activated(), 0);
    }

    #[tokio::test]
    async fn renewal_reuses_the_channel() {
        let s = server(Identity::generate("server", [1; 32]).unwrap()).await;
        let c = ClientConfig::new(Identity::generate("client", [2; 32]).unwrap());
        let mut session = connect(s.local_addr(), &c).await.unwrap();
        session.renew().await.unwrap();
        session.close().await;
        assert_eq!(s.stats.channels_opened.load(Ordering::Relaxed), 1);
    }

    #[tokio::test]
    async fn silent_peer_times_out() {
        let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = l.local_addr().unwrap();
        let _hold = tokio::spawn(async move {
            let (_s, _) = l.accept().await.unwrap();
            tokio::time::sleep(Duration::from_secs(5)).await;
        });
        let c = ClientConfig::new(Identity::generate("client", [2; 32]).unwrap()).with_timeout(Duration::from_millis(200));
        let r = handshake(addr, &c).await;
        assert_eq!(r.outcome, Outcome::Timeout);
        assert_eq!(r.phase_reached, Phase::GetEndpoints);
    }
}
