//! OPC UA TCP binary transport framing.
//!
//! Every chunk starts with the same 8-byte header:
//!
//! ```text
//! +------+-------+------------------+
//! | type | chunk | message size     |
//! | 3B   | 1B    | 4B little-endian |
//! +------+-------+------------------+
//! ```
//!
//! Only the subset of the binary encoding needed to follow a connection from
//! `HEL` to `CLO` is implemented. Service bodies are carried as opaque bytes.

mod chunk;
mod opn;
mod primitives;
mod symmetric;
mod transport;

use std::fmt;

use thiserror::Error;

pub use chunk::{decode_chunk, encode_chunk, Chunk};
pub use opn::{decode_opn, encode_opn, AsymmetricSecurityHeader, OpnMessage};
pub use primitives::{ByteString, Reader, UaString, Writer};
pub use symmetric::SymmetricChunk;
pub use transport::{Acknowledge, ErrorMessage, Hello};

/// Size in bytes of the OPC UA message header.
pub const MESSAGE_HEADER_LEN: usize = 8;

/// Length of a certificate thumbprint carried in the asymmetric security header.
pub const THUMBPRINT_LEN: usize = 20;

pub const SECURITY_POLICY_NONE: &str = "http://opcfoundation.org/UA/SecurityPolicy#None";
pub const SECURITY_POLICY_BASIC256SHA256: &str =
    "http://opcfoundation.org/UA/SecurityPolicy#Basic256Sha256";
pub const SECURITY_POLICY_AES128_SHA256_RSAOAEP: &str =
    "http://opcfoundation.org/UA/SecurityPolicy#Aes128_Sha256_RsaOaep";
pub const SECURITY_POLICY_AES256_SHA256_RSAPSS: &str =
    "http://opcfoundation.org/UA/SecurityPolicy#Aes256_Sha256_RsaPss";

/// The three policies recommended for SignAndEncrypt deployments.
pub const RECOMMENDED_POLICIES: [&str; 3] = [
    SECURITY_POLICY_AES128_SHA256_RSAOAEP,
    SECURITY_POLICY_BASIC256SHA256,
    SECURITY_POLICY_AES256_SHA256_RSAPSS,
];

pub fn is_recommended_policy(uri: &str) -> bool {
    RECOMMENDED_POLICIES.contains(&uri)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated input: need {needed} bytes, have {available}")]
    TruncatedInput { needed: usize, available: usize },

    #[error("unknown message type {0:?}")]
    UnknownMessageType([u8; 3]),

    #[error("unknown chunk type {0:#04x}")]
    UnknownChunkType(u8),

    #[error("message size {0} is smaller than the header")]
    InvalidMessageSize(u32),

    #[error("declared message size {declared} does not match chunk length {actual}")]
    SizeMismatch { declared: usize, actual: usize },

    #[error("byte string declares {declared} bytes but only {remaining} remain")]
    MalformedByteString { declared: i32, remaining: usize },

    #[error("expected an OPN chunk, found {0}")]
    NotOpn(MessageType),

    #[error("unexpected message type {0} for this decoder")]
    UnexpectedMessageType(MessageType),

    #[error("OPN chunks must be final, found chunk type {0}")]
    UnsupportedOpnChunk(ChunkType),

    #[error("receiver thumbprint must be {THUMBPRINT_LEN} bytes, got {0}")]
    ThumbprintLengthInvalid(usize),

    #[error("string field is not valid UTF-8")]
    InvalidUtf8,

    #[error("encoded value exceeds the 32-bit length range")]
    LengthOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Hello,
    Acknowledge,
    OpenSecureChannel,
    Message,
    CloseSecureChannel,
    Error,
}

impl MessageType {
    pub const fn code(self) -> &'static [u8; 3] {
        match self {
            MessageType::Hello => b"HEL",
            MessageType::Acknowledge => b"ACK",
            MessageType::OpenSecureChannel => b"OPN",
            MessageType::Message => b"MSG",
            MessageType::CloseSecureChannel => b"CLO",
            MessageType::Error => b"ERR",
        }
    }

    pub fn from_code(code: [u8; 3]) -> Result<Self, CodecError> {
        Ok(match &code {
            b"HEL" => MessageType::Hello,
            b"ACK" => MessageType::Acknowledge,
            b"OPN" => MessageType::OpenSecureChannel,
            b"MSG" => MessageType::Message,
            b"CLO" => MessageType::CloseSecureChannel,
            b"ERR" => MessageType::Error,
            _ => return Err(CodecError::UnknownMessageType(code)),
        })
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // codes are ASCII by construction
        f.write_str(std::str::from_utf8(self.code()).unwrap_or("???"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChunkType {
    Final,
    Intermediate,
    Abort,
}

impl ChunkType {
    pub const fn byte(self) -> u8 {
        match self {
            ChunkType::Final => b'F',
            ChunkType::Intermediate => b'C',
            ChunkType::Abort => b'A',
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, CodecError> {
        match b {
            b'F' => Ok(ChunkType::Final),
            b'C' => Ok(ChunkType::Intermediate),
            b'A' => Ok(ChunkType::Abort),
            other => Err(CodecError::UnknownChunkType(other)),
        }
    }
}

impl fmt::Display for ChunkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.byte() as char)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageHeader {
    pub msg_type: MessageType,
    pub chunk_type: ChunkType,
    /// Size of the whole chunk, header included.
    pub message_size: u32,
}

impl MessageHeader {
    pub fn new(msg_type: MessageType, chunk_type: ChunkType, message_size: u32) -> Self {
        MessageHeader {
            msg_type,
            chunk_type,
            message_size,
        }
    }

    pub fn encode(&self) -> [u8; MESSAGE_HEADER_LEN] {
        let mut out = [0u8; MESSAGE_HEADER_LEN];
        out[..3].copy_from_slice(self.msg_type.code());
        out[3] = self.chunk_type.byte();
        out[4..].copy_from_slice(&self.message_size.to_le_bytes());
        out
    }
}

/// Reads the fixed 8-byte header at the start of `bytes`.
pub fn decode_message_header(bytes: &[u8]) -> Result<MessageHeader, CodecError> {
    if bytes.len() < MESSAGE_HEADER_LEN {
        return Err(CodecError::TruncatedInput {
            needed: MESSAGE_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let msg_type = MessageType::from_code([bytes[0], bytes[1], bytes[2]])?;
    let chunk_type = ChunkType::from_byte(bytes[3])?;
    let message_size = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if (message_size as usize) < MESSAGE_HEADER_LEN {
        return Err(CodecError::InvalidMessageSize(message_size));
    }
    Ok(MessageHeader {
        msg_type,
        chunk_type,
        message_size,
    })
}

/// Checks that `chunk` is exactly as long as its header claims and returns the header.
pub(crate) fn checked_header(chunk: &[u8]) -> Result<MessageHeader, CodecError> {
    let header = decode_message_header(chunk)?;
    let declared = header.message_size as usize;
    if chunk.len() < declared {
        return Err(CodecError::TruncatedInput {
            needed: declared,
            available: chunk.len(),
        });
    }
    if chunk.len() > declared {
        return Err(CodecError::SizeMismatch {
            declared,
            actual: chunk.len(),
        });
    }
    Ok(header)
}

pub(crate) fn finish_chunk(
    msg_type: MessageType,
    chunk_type: ChunkType,
    mut buf: Vec<u8>,
) -> Result<Vec<u8>, CodecError> {
    // `buf` was written with a placeholder header
    let size = u32::try_from(buf.len()).map_err(|_| CodecError::LengthOverflow)?;
    buf[..MESSAGE_HEADER_LEN].copy_from_slice(&MessageHeader::new(msg_type, chunk_type, size).encode());
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_opn_header() {
        let h = decode_message_header(b"OPNF\x10\x00\x00\x00").unwrap();
        assert_eq!(h.msg_type, MessageType::OpenSecureChannel);
        assert_eq!(h.chunk_type, ChunkType::Final);
        assert_eq!(h.message_size, 16);
    }

    #[test]
    fn decodes_hel_header() {
        let h = decode_message_header(b"HELF\x20\x00\x00\x00").unwrap();
        assert_eq!(h, MessageHeader::new(MessageType::Hello, ChunkType::Final, 32));
    }

    #[test]
    fn rejects_unknown_type() {
        assert_eq!(
            decode_message_header(b"XYZF\x10\x00\x00\x00"),
            Err(CodecError::UnknownMessageType(*b"XYZ"))
        );
    }

    #[test]
    fn rejects_short_input() {
        assert!(matches!(
            decode_message_header(b"OPNF\x10\x00"),
            Err(CodecError::TruncatedInput { needed: 8, available: 6 })
        ));
    }

    #[test]
    fn rejects_size_below_header() {
        assert_eq!(
            decode_message_header(b"MSGF\x07\x00\x00\x00"),
            Err(CodecError::InvalidMessageSize(7))
        );
    }

    #[test]
    fn header_encode_matches_decode() {
        for t in [
            MessageType::Hello,
            MessageType::Acknowledge,
            MessageType::OpenSecureChannel,
            MessageType::Message,
            MessageType::CloseSecureChannel,
            MessageType::Error,
        ] {
            let h = MessageHeader::new(t, ChunkType::Intermediate, 0x0102_0304);
            assert_eq!(decode_message_header(&h.encode()).unwrap(), h);
        }
    }
}
