use super::{
    checked_header, decode_opn, encode_opn, Acknowledge, CodecError, ErrorMessage, Hello,
    MessageType, OpnMessage, SymmetricChunk,
};

/// Any complete chunk the gateway or the endpoints can exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chunk {
    Hello(Hello),
    Acknowledge(Acknowledge),
    Error(ErrorMessage),
    Open(OpnMessage),
    /// MSG or CLO.
    Symmetric(SymmetricChunk),
}

impl Chunk {
    pub fn message_type(&self) -> MessageType {
        match self {
            Chunk::Hello(_) => MessageType::Hello,
            Chunk::Acknowledge(_) => MessageType::Acknowledge,
            Chunk::Error(_) => MessageType::Error,
            Chunk::Open(_) => MessageType::OpenSecureChannel,
            Chunk::Symmetric(c) => c.header.msg_type,
        }
    }
}

pub fn decode_chunk(bytes: &[u8]) -> Result<Chunk, CodecError> {
    let header = checked_header(bytes)?;
    Ok(match header.msg_type {
        MessageType::Hello => Chunk::Hello(Hello::decode(bytes)?),
        MessageType::Acknowledge => Chunk::Acknowledge(Acknowledge::decode(bytes)?),
        MessageType::Error => Chunk::Error(ErrorMessage::decode(bytes)?),
        MessageType::OpenSecureChannel => Chunk::Open(decode_opn(bytes)?),
        MessageType::Message | MessageType::CloseSecureChannel => {
            Chunk::Symmetric(SymmetricChunk::decode(bytes)?)
        }
    })
}

pub fn encode_chunk(chunk: &Chunk) -> Result<Vec<u8>, CodecError> {
    match chunk {
        Chunk::Hello(h) => h.encode(),
        Chunk::Acknowledge(a) => a.encode(),
        Chunk::Error(e) => e.encode(),
        Chunk::Open(o) => encode_opn(o),
        Chunk::Symmetric(s) => s.encode(),
    }
}
