//! Connection-level messages: HEL, ACK and ERR.

use super::{
    checked_header, finish_chunk, ChunkType, CodecError, MessageType, Reader, UaString, Writer,
    MESSAGE_HEADER_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub protocol_version: u32,
    pub receive_buffer_size: u32,
    pub send_buffer_size: u32,
    pub max_message_size: u32,
    pub max_chunk_count: u32,
    pub endpoint_url: UaString,
}

impl Hello {
    pub fn new(endpoint_url: &str) -> Self {
        Hello {
            protocol_version: 0,
            receive_buffer_size: 65535,
            send_buffer_size: 65535,
            max_message_size: 0,
            max_chunk_count: 0,
            endpoint_url: endpoint_url.into(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.bytes(&[0u8; MESSAGE_HEADER_LEN])
            .u32(self.protocol_version)
            .u32(self.receive_buffer_size)
            .u32(self.send_buffer_size)
            .u32(self.max_message_size)
            .u32(self.max_chunk_count)
            .ua_string(&self.endpoint_url)?;
        finish_chunk(MessageType::Hello, ChunkType::Final, w.into_inner())
    }

    pub fn decode(chunk: &[u8]) -> Result<Self, CodecError> {
        let mut r = body_reader(chunk, MessageType::Hello)?;
        Ok(Hello {
            protocol_version: r.u32()?,
            receive_buffer_size: r.u32()?,
            send_buffer_size: r.u32()?,
            max_message_size: r.u32()?,
            max_chunk_count: r.u32()?,
            endpoint_url: r.ua_string()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acknowledge {
    pub protocol_version: u32,
    pub receive_buffer_size: u32,
    pub send_buffer_size: u32,
    pub max_message_size: u32,
    pub max_chunk_count: u32,
}

impl Acknowledge {
    /// Mirrors the peer's hello, which is what a permissive server does.
    pub fn for_hello(hello: &Hello) -> Self {
        Acknowledge {
            protocol_version: hello.protocol_version,
            receive_buffer_size: hello.send_buffer_size,
            send_buffer_size: hello.receive_buffer_size,
            max_message_size: hello.max_message_size,
            max_chunk_count: hello.max_chunk_count,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.bytes(&[0u8; MESSAGE_HEADER_LEN])
            .u32(self.protocol_version)
            .u32(self.receive_buffer_size)
            .u32(self.send_buffer_size)
            .u32(self.max_message_size)
            .u32(self.max_chunk_count);
        finish_chunk(MessageType::Acknowledge, ChunkType::Final, w.into_inner())
    }

    pub fn decode(chunk: &[u8]) -> Result<Self, CodecError> {
        let mut r = body_reader(chunk, MessageType::Acknowledge)?;
        Ok(Acknowledge {
            protocol_version: r.u32()?,
            receive_buffer_size: r.u32()?,
            send_buffer_size: r.u32()?,
            max_message_size: r.u32()?,
            max_chunk_count: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMessage {
    /// OPC UA status code.
    pub error: u32,
    pub reason: UaString,
}

impl ErrorMessage {
    pub const BAD_SECURITY_CHECKS_FAILED: u32 = 0x8013_0000;
    pub const BAD_CERTIFICATE_INVALID: u32 = 0x8012_0000;
    pub const BAD_TCP_MESSAGE_TYPE_INVALID: u32 = 0x807E_0000;
    pub const BAD_SECURITY_POLICY_REJECTED: u32 = 0x8055_0000;

    pub fn new(error: u32, reason: &str) -> Self {
        ErrorMessage {
            error,
            reason: reason.into(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.bytes(&[0u8; MESSAGE_HEADER_LEN])
            .u32(self.error)
            .ua_string(&self.reason)?;
        finish_chunk(MessageType::Error, ChunkType::Final, w.into_inner())
    }

    pub fn decode(chunk: &[u8]) -> Result<Self, CodecError> {
        let mut r = body_reader(chunk, MessageType::Error)?;
        Ok(ErrorMessage {
            error: r.u32()?,
            reason: r.ua_string()?,
        })
    }
}

fn body_reader(chunk: &[u8], expected: MessageType) -> Result<Reader<'_>, CodecError> {
    let header = checked_header(chunk)?;
    if header.msg_type != expected {
        return Err(CodecError::UnexpectedMessageType(header.msg_type));
    }
    Ok(Reader::new(&chunk[MESSAGE_HEADER_LEN..]))
}
