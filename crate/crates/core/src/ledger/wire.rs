//! Local TCP access to a [`LedgerNode`]: length-prefixed JSON frames.

use std::net::SocketAddr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::cert::CertificateRecord;

use super::feed::{Layer, LedgerEvent, Subscription};
use super::node::LedgerNode;
use super::registry::{ContractCall, RegistryEntry, RegistryEvent};
use super::transaction::{LedgerTransaction, TxId};
use super::LedgerError;

pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Tips,
    SubmitL1 { tx: LedgerTransaction },
    CallL2 { call: ContractCall },
    GetAll,
    Subscribe { layer: Layer, tag: String, from: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Tips { a: TxId, b: TxId },
    Submitted { id: TxId },
    Executed { event: RegistryEvent },
    Certificates { certificates: Vec<RegistryEntry> },
    Event { event: LedgerEvent },
    Error { unauthorized: bool, message: String },
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("ledger connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad frame: {0}")]
    Frame(String),
    #[error("caller is not an authorized administrator")]
    Unauthorized,
    #[error("ledger rejected request: {0}")]
    Rejected(String),
    #[error("unexpected response")]
    UnexpectedResponse,
}

pub async fn write_frame<T: Serialize>(stream: &mut TcpStream, msg: &T) -> Result<(), WireError> {
    let body = serde_json::to_vec(msg).map_err(|e| WireError::Frame(e.to_string()))?;
    if body.len() > MAX_FRAME {
        return Err(WireError::Frame(format!("{} bytes exceeds limit", body.len())));
    }
    stream.write_all(&(body.len() as u32).to_le_bytes()).await?;
    stream.write_all(&body).await?;
    Ok(())
}

/// `Ok(None)` on a clean close before a frame starts.
pub async fn read_frame<T: for<'de> Deserialize<'de>>(stream: &mut TcpStream) -> Result<Option<T>, WireError> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::Frame(format!("{len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body).await?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| WireError::Frame(e.to_string()))
}

fn error_response(e: LedgerError) -> Response {
    Response::Error {
        unauthorized: e == LedgerError::Unauthorized,
        message: e.to_string(),
    }
}

pub fn serve(listener: TcpListener, node: Arc<LedgerNode>) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            let Ok((stream, peer)) = listener.accept().await else { continue };
            let node = node.clone();
            tokio::spawn(async move {
                if let Err(e) = handle(stream, node).await {
                    tracing::debug!(%peer, error = %e, "ledger client disconnected");
                }
            });
        }
    })
}

async fn handle(mut stream: TcpStream, node: Arc<LedgerNode>) -> Result<(), WireError> {
    while let Some(req) = read_frame::<Request>(&mut stream).await? {
        let resp = match req {
            Request::Tips => match node.tips() {
                Ok((a, b)) => Response::Tips { a, b },
                Err(e) => error_response(e),
            },
            Request::SubmitL1 { tx } => match node.submit_l1(tx) {
                Ok(id) => Response::Submitted { id },
                Err(e) => error_response(e),
            },
            Request::CallL2 { call } => match node.call_l2(call) {
                Ok(event) => Response::Executed { event },
                Err(e) => error_response(e),
            },
            Request::GetAll => Response::Certificates {
                certificates: node
                    .get_all_certificates()
                    .into_iter()
                    .map(|c| RegistryEntry {
                        der: c.der().to_vec(),
                        expire_date: c.expire_date.unwrap_or_default(),
                    })
                    .collect(),
            },
            Request::Subscribe { layer, tag, from } => {
                let mut sub = node.subscribe(layer, &tag, from);
                drop(node);
                while let Some(event) = sub.recv().await {
                    write_frame(&mut stream, &Response::Event { event }).await?;
                }
                return Ok(());
            }
        };
        write_frame(&mut stream, &resp).await?;
    }
    Ok(())
}

/// Request/response client for administrators and controllers.
pub struct LedgerClient {
    stream: TcpStream,
}

impl LedgerClient {
    pub async fn connect(addr: SocketAddr) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        Ok(LedgerClient { stream })
    }

    async fn call(&mut self, req: &Request) -> Result<Response, WireError> {
        write_frame(&mut self.stream, req).await?;
        match read_frame::<Response>(&mut self.stream).await? {
            None => Err(WireError::Io(std::io::ErrorKind::UnexpectedEof.into())),
            Some(Response::Error { unauthorized: true, .. }) => Err(WireError::Unauthorized),
            Some(Response::Error { message, .. }) => Err(WireError::Rejected(message)),
            Some(r) => Ok(r),
        }
    }

    pub async fn tips(&mut self) -> Result<(TxId, TxId), WireError> {
        match self.call(&Request::Tips).await? {
            Response::Tips { a, b } => Ok((a, b)),
            _ => Err(WireError::UnexpectedResponse),
        }
    }

    pub async fn submit_l1(&mut self, tx: LedgerTransaction) -> Result<TxId, WireError> {
        match self.call(&Request::SubmitL1 { tx }).await? {
            Response::Submitted { id } => Ok(id),
            _ => Err(WireError::UnexpectedResponse),
        }
    }

    pub async fn call_l2(&mut self, call: ContractCall) -> Result<RegistryEvent, WireError> {
        match self.call(&Request::CallL2 { call }).await? {
            Response::Executed { event } => Ok(event),
            _ => Err(WireError::UnexpectedResponse),
        }
    }

    pub async fn get_all(&mut self) -> Result<Vec<CertificateRecord>, WireError> {
        match self.call(&Request::GetAll).await? {
            Response::Certificates { certificates } => certificates
                .into_iter()
                .map(|e| {
                    CertificateRecord::new(e.der, Some(e.expire_date)).map_err(|e| WireError::Frame(e.to_string()))
                })
                .collect(),
            _ => Err(WireError::UnexpectedResponse),
        }
    }

    /// Turns this connection into an event stream.
    pub async fn subscribe(mut self, layer: Layer, tag: &str, from: u64) -> Result<Subscription, WireError> {
        let req = Request::Subscribe {
            layer,
            tag: tag.to_owned(),
            from,
        };
        write_frame(&mut self.stream, &req).await?;
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            while let Ok(Some(Response::Event { event })) = read_frame::<Response>(&mut self.stream).await {
                if tx.send(event).is_err() {
                    return;
                }
            }
        });
        Ok(Subscription::new(rx))
    }
}
