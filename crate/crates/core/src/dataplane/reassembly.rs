//! Chunk framing over a byte stream and TCP segment ordering for captures.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Duration;

use thiserror::Error;

use crate::codec::{decode_message_header, CodecError, MessageType, MESSAGE_HEADER_LEN, THUMBPRINT_LEN};

use super::extract::BLOCK_LEN;
use super::packet::ParsedPacket;

/// Fixed OPN bytes around the certificate: header, channel id, the three
/// length prefixes, a thumbprint and the sequence header.
pub const OPN_FIXED_OVERHEAD: usize = MESSAGE_HEADER_LEN + 4 + 4 + 4 + (4 + THUMBPRINT_LEN) + 8;

pub const DEFAULT_GAP_TIMEOUT: Duration = Duration::from_secs(5);

/// Per-direction buffering bound: room for two maximal OPN chunks.
pub fn reassembly_limit(max_chunks: usize) -> usize {
    2 * (BLOCK_LEN * max_chunks + OPN_FIXED_OVERHEAD)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReassemblyError {
    #[error("reassembly buffer would hold {buffered} bytes, limit is {limit}")]
    ReassemblyOverflow { buffered: usize, limit: usize },
    #[error("sequence gap at offset {offset} not filled within {timeout:?}")]
    OutOfOrderGapTimeout { offset: u64, timeout: Duration },
    #[error("stream is not OPC UA framed: {0}")]
    Framing(#[from] CodecError),
}

/// A unit of stream data ready for a verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Framed {
    /// A complete chunk starting at `offset` in the stream.
    Chunk {
        msg_type: MessageType,
        offset: u64,
        bytes: Vec<u8>,
    },
    /// Part of a non-OPN chunk too large to buffer; forwarded as it arrives.
    Partial { offset: u64, bytes: Vec<u8> },
}

impl Framed {
    pub fn bytes(&self) -> &[u8] {
        match self {
            Framed::Chunk { bytes, .. } | Framed::Partial { bytes, .. } => bytes,
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        match self {
            Framed::Chunk { bytes, .. } | Framed::Partial { bytes, .. } => bytes,
        }
    }

    pub fn is_opn(&self) -> bool {
        matches!(
            self,
            Framed::Chunk {
                msg_type: MessageType::OpenSecureChannel,
                ..
            }
        )
    }

    pub fn span(&self) -> Range<u64> {
        match self {
            Framed::Chunk { offset, bytes, .. } | Framed::Partial { offset, bytes } => {
                *offset..*offset + bytes.len() as u64
            }
        }
    }
}

/// Splits an in-order byte stream into chunks using the header size field.
#[derive(Debug)]
pub struct ChunkFramer {
    buf: Vec<u8>,
    /// Stream offset of `buf[0]`.
    offset: u64,
    limit: usize,
    /// Bytes left of an oversized non-OPN chunk being streamed through.
    streaming: usize,
}

impl ChunkFramer {
    pub fn new(limit: usize) -> Self {
        ChunkFramer {
            buf: Vec::new(),
            offset: 0,
            limit,
            streaming: 0,
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Stream offset of the next byte to be pushed.
    pub fn position(&self) -> u64 {
        self.offset + self.buf.len() as u64
    }

    /// True when the incomplete chunk held in the buffer is, or may be, an OPN.
    pub fn pending_opn(&self) -> bool {
        let code = MessageType::OpenSecureChannel.code();
        let n = self.buf.len().min(3);
        n > 0 && self.buf[..n] == code[..n]
    }

    pub fn push(&mut self, data: &[u8]) -> Result<Vec<Framed>, ReassemblyError> {
        let mut out = Vec::new();
        self.push_into(data, &mut out)?;
        Ok(out)
    }

    /// Like [`push`](Self::push), but units framed before an error are kept
    /// in `out` and the unframed remainder stays available through
    /// [`take_buffered`](Self::take_buffered).
    pub fn push_into(&mut self, mut data: &[u8], out: &mut Vec<Framed>) -> Result<(), ReassemblyError> {
        if self.streaming > 0 {
            let n = self.streaming.min(data.len());
            out.push(Framed::Partial {
                offset: self.offset,
                bytes: data[..n].to_vec(),
            });
            self.streaming -= n;
            self.offset += n as u64;
            data = &data[n..];
        }
        if data.is_empty() {
            return Ok(());
        }
        let buffered = self.buf.len() + data.len();
        self.buf.extend_from_slice(data);

        loop {
            if self.streaming > 0 {
                // stream out whatever of the oversized chunk is already buffered
                let n = self.streaming.min(self.buf.len());
                if n > 0 {
                    out.push(Framed::Partial {
                        offset: self.offset,
                        bytes: self.buf.drain(..n).collect(),
                    });
                    self.streaming -= n;
                    self.offset += n as u64;
                }
                if self.streaming > 0 {
                    break;
                }
            }
            if self.buf.len() < MESSAGE_HEADER_LEN {
                break;
            }
            let header = decode_message_header(&self.buf)?;
            let size = header.message_size as usize;
            if size > self.limit {
                if header.msg_type == MessageType::OpenSecureChannel {
                    return Err(ReassemblyError::ReassemblyOverflow {
                        buffered: buffered.max(size),
                        limit: self.limit,
                    });
                }
                self.streaming = size;
                continue;
            }
            if self.buf.len() < size {
                break;
            }
            let bytes: Vec<u8> = self.buf.drain(..size).collect();
            out.push(Framed::Chunk {
                msg_type: header.msg_type,
                offset: self.offset,
                bytes,
            });
            self.offset += size as u64;
        }

        if self.buf.len() > self.limit {
            return Err(ReassemblyError::ReassemblyOverflow {
                buffered: self.buf.len(),
                limit: self.limit,
            });
        }
        Ok(())
    }

    /// Removes and returns bytes not yet handed out as units.
    pub fn take_buffered(&mut self) -> Vec<u8> {
        self.offset += self.buf.len() as u64;
        std::mem::take(&mut self.buf)
    }
}

/// Orders the payloads of one TCP direction and feeds them to a framer.
#[derive(Debug)]
pub struct TcpStreamState {
    next_seq: Option<u32>,
    pending: BTreeMap<u64, Vec<u8>>,
    pending_bytes: usize,
    gap_since: Option<Duration>,
    gap_timeout: Duration,
    delivered: u64,
    framer: ChunkFramer,
}

/// Result of feeding one segment.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Reassembled {
    pub units: Vec<Framed>,
    /// Whether this segment's bytes belong to an OPN chunk.
    pub tagged: bool,
}

impl TcpStreamState {
    pub fn new(limit: usize, gap_timeout: Duration) -> Self {
        TcpStreamState {
            next_seq: None,
            pending: BTreeMap::new(),
            pending_bytes: 0,
            gap_since: None,
            gap_timeout,
            delivered: 0,
            framer: ChunkFramer::new(limit),
        }
    }

    /// Feeds one segment captured at `now` (capture-relative time).
    pub fn reassemble(
        &mut self,
        segment: &ParsedPacket,
        frame: &[u8],
        now: Duration,
    ) -> Result<Reassembled, ReassemblyError> {
        let Some(tcp) = segment.tcp.as_ref() else {
            return Ok(Reassembled::default());
        };
        let payload = segment.payload(frame);
        if tcp.flags.syn {
            self.next_seq = Some(tcp.sequence_number.wrapping_add(1));
        }
        if payload.is_empty() {
            return self.check_gap(now).map(|_| Reassembled::default());
        }
        let next = *self.next_seq.get_or_insert(tcp.sequence_number);
        let rel = tcp.sequence_number.wrapping_sub(next) as i32;

        let mut result = Reassembled::default();
        if rel < 0 {
            // retransmission, possibly with some new bytes at the end
            let skip = rel.unsigned_abs() as usize;
            if skip >= payload.len() {
                return Ok(result);
            }
            self.deliver(&payload[skip..], &mut result)?;
        } else if rel == 0 {
            self.deliver(payload, &mut result)?;
        } else {
            let at = self.delivered + rel as u64;
            self.pending_bytes += payload.len();
            if self.framer.buffered() + self.pending_bytes > self.framer.limit() {
                return Err(ReassemblyError::ReassemblyOverflow {
                    buffered: self.framer.buffered() + self.pending_bytes,
                    limit: self.framer.limit(),
                });
            }
            if let Some(old) = self.pending.insert(at, payload.to_vec()) {
                self.pending_bytes -= old.len();
            }
            self.gap_since.get_or_insert(now);
        }

        // drain segments that are now contiguous
        while let Some((&at, _)) = self.pending.first_key_value() {
            if at > self.delivered {
                break;
            }
            let (at, data) = self.pending.pop_first().expect("non-empty");
            self.pending_bytes -= data.len();
            let skip = (self.delivered - at) as usize;
            if skip < data.len() {
                self.deliver(&data[skip..], &mut result)?;
            }
        }
        if self.pending.is_empty() {
            self.gap_since = None;
        }
        self.check_gap(now)?;
        Ok(result)
    }

    fn deliver(&mut self, data: &[u8], result: &mut Reassembled) -> Result<(), ReassemblyError> {
        let start = self.framer.position();
        let end = start + data.len() as u64;
        let mut units = Vec::new();
        let pushed = self.framer.push_into(data, &mut units);
        self.delivered += data.len() as u64;
        if let Some(next) = self.next_seq.as_mut() {
            *next = next.wrapping_add(data.len() as u32);
        }
        let overlaps = units
            .iter()
            .any(|u| u.is_opn() && u.span().start < end && start < u.span().end);
        result.tagged |= overlaps || self.framer.pending_opn();
        result.units.extend(units);
        pushed
    }

    fn check_gap(&self, now: Duration) -> Result<(), ReassemblyError> {
        match self.gap_since {
            Some(since) if now.saturating_sub(since) > self.gap_timeout => {
                Err(ReassemblyError::OutOfOrderGapTimeout {
                    offset: self.delivered,
                    timeout: self.gap_timeout,
                })
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_opn, AsymmetricSecurityHeader, OpnMessage, SymmetricChunk};

    fn opn(cert_len: usize) -> Vec<u8> {
        let sh = AsymmetricSecurityHeader::new("p", Some(vec![1; cert_len]), None);
        encode_opn(&OpnMessage::new(0, sh, 1, 1, vec![2; 10])).unwrap()
    }

    fn msg(body: usize) -> Vec<u8> {
        SymmetricChunk::new(MessageType::Message, 1, 1, 1, 1, vec![3; body])
            .encode()
            .unwrap()
    }

    #[test]
    fn limit_from_layout() {
        assert_eq!(OPN_FIXED_OVERHEAD, 52);
        assert_eq!(reassembly_limit(100), 2 * (25600 + 52));
    }

    #[test]
    fn split_chunk_is_buffered() {
        let c = opn(600);
        let mut f = ChunkFramer::new(reassembly_limit(100));
        assert!(f.push(&c[..100]).unwrap().is_empty());
        assert!(f.pending_opn());
        let out = f.push(&c[100..]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bytes(), &c[..]);
        assert!(out[0].is_opn());
    }

    #[test]
    fn two_chunks_in_one_segment() {
        let a = opn(10);
        let b = msg(5);
        let mut f = ChunkFramer::new(reassembly_limit(100));
        let out = f.push(&[a.clone(), b.clone()].concat()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].bytes(), &a[..]);
        assert_eq!(out[1].bytes(), &b[..]);
        assert_eq!(out[1].span().start, a.len() as u64);
    }

    #[test]
    fn oversized_opn_overflows() {
        let mut header = b"OPNF".to_vec();
        header.extend_from_slice(&70_000u32.to_le_bytes());
        let mut f = ChunkFramer::new(reassembly_limit(100));
        let mut total = 0;
        let mut err = None;
        let mut seg = header;
        seg.resize(6000, 0);
        for _ in 0..10 {
            total += seg.len();
            if let Err(e) = f.push(&seg) {
                err = Some(e);
                break;
            }
            seg = vec![0; 6000];
        }
        assert!(total <= 60_000);
        assert!(matches!(err, Some(ReassemblyError::ReassemblyOverflow { .. })));
    }

    #[test]
    fn oversized_msg_streams_through() {
        let big = msg(80_000);
        let mut f = ChunkFramer::new(reassembly_limit(100));
        let mut out = Vec::new();
        for piece in big.chunks(1400) {
            for u in f.push(piece).unwrap() {
                out.extend(u.into_bytes());
            }
            assert!(f.buffered() <= f.limit());
        }
        assert_eq!(out, big);
        let tail = msg(3);
        assert_eq!(f.push(&tail).unwrap()[0].bytes(), &tail[..]);
    }

    #[test]
    fn garbage_is_a_framing_error() {
        let mut f = ChunkFramer::new(1000);
        assert!(matches!(f.push(b"GET / HTTP/1.1\r\n"), Err(ReassemblyError::Framing(_))));
    }
}
