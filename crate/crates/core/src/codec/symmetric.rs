use super::{
    checked_header, finish_chunk, ChunkType, CodecError, MessageHeader, MessageType, Reader, Writer,
    MESSAGE_HEADER_LEN,
};

/// A MSG or CLO chunk on an established channel: symmetric security header
/// (token id) and sequence header followed by the service body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetricChunk {
    pub header: MessageHeader,
    pub secure_channel_id: u32,
    pub token_id: u32,
    pub sequence_number: u32,
    pub request_id: u32,
    pub body: Vec<u8>,
}

impl SymmetricChunk {
    pub fn new(
        msg_type: MessageType,
        secure_channel_id: u32,
        token_id: u32,
        sequence_number: u32,
        request_id: u32,
        body: Vec<u8>,
    ) -> Self {
        let size = MESSAGE_HEADER_LEN + 16 + body.len();
        SymmetricChunk {
            header: MessageHeader::new(
                msg_type,
                ChunkType::Final,
                u32::try_from(size).unwrap_or(u32::MAX),
            ),
            secure_channel_id,
            token_id,
            sequence_number,
            request_id,
            body,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        if !matches!(
            self.header.msg_type,
            MessageType::Message | MessageType::CloseSecureChannel
        ) {
            return Err(CodecError::UnexpectedMessageType(self.header.msg_type));
        }
        let mut w = Writer::with_capacity(MESSAGE_HEADER_LEN + 16 + self.body.len());
        w.bytes(&[0u8; MESSAGE_HEADER_LEN])
            .u32(self.secure_channel_id)
            .u32(self.token_id)
            .u32(self.sequence_number)
            .u32(self.request_id)
            .bytes(&self.body);
        finish_chunk(self.header.msg_type, self.header.chunk_type, w.into_inner())
    }

    pub fn decode(chunk: &[u8]) -> Result<Self, CodecError> {
        let header = checked_header(chunk)?;
        if !matches!(
            header.msg_type,
            MessageType::Message | MessageType::CloseSecureChannel
        ) {
            return Err(CodecError::UnexpectedMessageType(header.msg_type));
        }
        let mut r = Reader::new(&chunk[MESSAGE_HEADER_LEN..]);
        Ok(SymmetricChunk {
            header,
            secure_channel_id: r.u32()?,
            token_id: r.u32()?,
            sequence_number: r.u32()?,
            request_id: r.u32()?,
            body: r.rest().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msg_round_trip() {
        let c = SymmetricChunk::new(MessageType::Message, 4, 1, 52, 2, b"body".to_vec());
        let bytes = c.encode().unwrap();
        assert_eq!(bytes.len(), 28);
        assert_eq!(SymmetricChunk::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn clo_round_trip() {
        let c = SymmetricChunk::new(MessageType::CloseSecureChannel, 4, 1, 53, 3, vec![]);
        assert_eq!(SymmetricChunk::decode(&c.encode().unwrap()).unwrap(), c);
    }

    #[test]
    fn opn_is_not_symmetric() {
        let c = SymmetricChunk::new(MessageType::OpenSecureChannel, 0, 0, 0, 0, vec![]);
        assert!(c.encode().is_err());
    }
}
