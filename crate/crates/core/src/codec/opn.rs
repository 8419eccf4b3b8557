//! OpenSecureChannel chunks and their asymmetric security header.

use super::{
    checked_header, finish_chunk, ByteString, ChunkType, CodecError, MessageHeader, MessageType,
    Reader, Writer, MESSAGE_HEADER_LEN, THUMBPRINT_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AsymmetricSecurityHeader {
    /// UTF-8 policy URI carried as a byte string.
    pub security_policy_uri: ByteString,
    /// DER bytes of the sender's application instance certificate.
    pub sender_certificate: ByteString,
    /// SHA-1 thumbprint of the receiver's certificate, or null.
    pub receiver_certificate_thumbprint: ByteString,
}

impl AsymmetricSecurityHeader {
    pub fn new(policy_uri: &str, sender_certificate: Option<Vec<u8>>, receiver: Option<[u8; 20]>) -> Self {
        AsymmetricSecurityHeader {
            security_policy_uri: ByteString::from(policy_uri.as_bytes()),
            sender_certificate: ByteString(sender_certificate),
            receiver_certificate_thumbprint: ByteString(receiver.map(|t| t.to_vec())),
        }
    }

    pub fn policy_uri(&self) -> Option<&str> {
        self.security_policy_uri
            .as_bytes()
            .and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn encoded_len(&self) -> usize {
        self.security_policy_uri.encoded_len()
            + self.sender_certificate.encoded_len()
            + self.receiver_certificate_thumbprint.encoded_len()
    }

    fn check(&self) -> Result<(), CodecError> {
        match self.receiver_certificate_thumbprint.as_bytes() {
            Some(t) if t.len() != THUMBPRINT_LEN => Err(CodecError::ThumbprintLengthInvalid(t.len())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpnMessage {
    pub header: MessageHeader,
    pub secure_channel_id: u32,
    pub security_header: AsymmetricSecurityHeader,
    pub sequence_number: u32,
    pub request_id: u32,
    /// Signed and/or encrypted OpenSecureChannel service body; not interpreted here.
    pub body: Vec<u8>,
}

impl OpnMessage {
    /// Builds a final OPN chunk with a header sized to match its encoding.
    pub fn new(
        secure_channel_id: u32,
        security_header: AsymmetricSecurityHeader,
        sequence_number: u32,
        request_id: u32,
        body: Vec<u8>,
    ) -> Self {
        let size = MESSAGE_HEADER_LEN + 4 + security_header.encoded_len() + 8 + body.len();
        OpnMessage {
            header: MessageHeader::new(
                MessageType::OpenSecureChannel,
                ChunkType::Final,
                u32::try_from(size).unwrap_or(u32::MAX),
            ),
            secure_channel_id,
            security_header,
            sequence_number,
            request_id,
            body,
        }
    }

    pub fn sender_certificate(&self) -> Option<&[u8]> {
        self.security_header.sender_certificate.as_bytes()
    }

    pub fn receiver_thumbprint(&self) -> Option<[u8; 20]> {
        self.security_header
            .receiver_certificate_thumbprint
            .as_bytes()
            .and_then(|b| b.try_into().ok())
    }
}

pub fn decode_opn(chunk: &[u8]) -> Result<OpnMessage, CodecError> {
    let header = checked_header(chunk)?;
    if header.msg_type != MessageType::OpenSecureChannel {
        return Err(CodecError::NotOpn(header.msg_type));
    }
    if header.chunk_type != ChunkType::Final {
        return Err(CodecError::UnsupportedOpnChunk(header.chunk_type));
    }
    let mut r = Reader::new(&chunk[MESSAGE_HEADER_LEN..]);
    let secure_channel_id = r.u32()?;
    let security_header = AsymmetricSecurityHeader {
        security_policy_uri: r.byte_string()?,
        sender_certificate: r.byte_string()?,
        receiver_certificate_thumbprint: r.byte_string()?,
    };
    security_header.check()?;
    let sequence_number = r.u32()?;
    let request_id = r.u32()?;
    let body = r.rest().to_vec();
    Ok(OpnMessage {
        header,
        secure_channel_id,
        security_header,
        sequence_number,
        request_id,
        body,
    })
}

/// Encodes `msg`, recomputing the header's message size from the actual layout.
pub fn encode_opn(msg: &OpnMessage) -> Result<Vec<u8>, CodecError> {
    msg.security_header.check()?;
    if msg.header.chunk_type != ChunkType::Final {
        return Err(CodecError::UnsupportedOpnChunk(msg.header.chunk_type));
    }
    let mut w = Writer::with_capacity(
        MESSAGE_HEADER_LEN + 12 + msg.security_header.encoded_len() + msg.body.len(),
    );
    w.bytes(&[0u8; MESSAGE_HEADER_LEN])
        .u32(msg.secure_channel_id)
        .byte_string(&msg.security_header.security_policy_uri)?
        .byte_string(&msg.security_header.sender_certificate)?
        .byte_string(&msg.security_header.receiver_certificate_thumbprint)?
        .u32(msg.sequence_number)
        .u32(msg.request_id)
        .bytes(&msg.body);
    finish_chunk(MessageType::OpenSecureChannel, ChunkType::Final, w.into_inner())
}
