//! Certificate extraction as the switch parser performs it: the certificate
//! is read in fixed 256-byte blocks because a single parser variable cannot
//! hold more than that.

use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::cert::Thumbprint;
use crate::codec::{MessageType, MESSAGE_HEADER_LEN, THUMBPRINT_LEN};

pub const BLOCK_LEN: usize = 256;
pub const DEFAULT_MAX_CHUNKS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("certificate length is zero")]
    ZeroLengthCertificate,
    #[error("certificate length {declared} exceeds {limit} bytes")]
    CertificateTooLong { declared: u32, limit: usize },
    #[error("malformed OPN chunk: {0}")]
    MalformedOpn(&'static str),
}

/// The certificate as a sequence of parser blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertChunks {
    pub chunks: Vec<Vec<u8>>,
    pub declared_length: u32,
    pub max_chunks: usize,
}

impl CertChunks {
    pub fn concat(&self) -> Vec<u8> {
        self.chunks.concat()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// SHA-1 over the blocks in order, which is the thumbprint of the DER.
    pub fn thumbprint(&self) -> Thumbprint {
        let mut h = Sha1::new();
        for c in &self.chunks {
            h.update(c);
        }
        Thumbprint(h.finalize().into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub certificate: CertChunks,
    /// The receiver thumbprint field, when present.
    pub receiver_thumbprint: Option<Thumbprint>,
}

/// Reassembles a length from four wire bytes extracted one at a time:
/// `hex4 ++ hex3 ++ hex2 ++ hex1`, where `hex1` is the first byte on the wire.
pub fn swap_length_bytes(wire: [u8; 4]) -> u32 {
    let [hex1, hex2, hex3, hex4] = wire;
    (u32::from(hex4) << 24) | (u32::from(hex3) << 16) | (u32::from(hex2) << 8) | u32::from(hex1)
}

pub fn max_certificate_len(max_chunks: usize) -> usize {
    BLOCK_LEN * max_chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    ParseHeader,
    ParsePolicy,
    ParseCertLength,
    CheckCertLength(u32),
    ParseCertificate { remaining: usize },
    ParseCertificateEndingPart { remaining: usize },
    ParseCertificateEndingPartOnly { len: usize },
    ParseThumbprint,
    Accept,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn extract(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ExtractError> {
        let end = self.pos.checked_add(n).ok_or(ExtractError::MalformedOpn(what))?;
        let out = self.buf.get(self.pos..end).ok_or(ExtractError::MalformedOpn(what))?;
        self.pos = end;
        Ok(out)
    }

    fn extract4(&mut self, what: &'static str) -> Result<[u8; 4], ExtractError> {
        let b = self.extract(4, what)?;
        Ok([b[0], b[1], b[2], b[3]])
    }
}

/// Runs the block-wise parser over a complete OPN chunk.
pub fn extract_certificate(opn_chunk: &[u8], max_chunks: usize) -> Result<Extraction, ExtractError> {
    let mut cur = Cursor { buf: opn_chunk, pos: 0 };
    let mut chunks: Vec<Vec<u8>> = Vec::new();
    let mut declared = 0u32;
    let mut receiver = None;
    let mut state = State::ParseHeader;

    loop {
        state = match state {
            State::ParseHeader => {
                let hdr = cur.extract(MESSAGE_HEADER_LEN, "header")?;
                if &hdr[..3] != MessageType::OpenSecureChannel.code() || hdr[3] != b'F' {
                    return Err(ExtractError::MalformedOpn("not a final OPN chunk"));
                }
                let size = u32::from_le_bytes([hdr[4], hdr[5], hdr[6], hdr[7]]) as usize;
                if size != opn_chunk.len() {
                    return Err(ExtractError::MalformedOpn("message size mismatch"));
                }
                cur.extract(4, "secure channel id")?;
                State::ParsePolicy
            }
            State::ParsePolicy => {
                let len = swap_length_bytes(cur.extract4("policy length")?) as i32;
                if len > 0 {
                    cur.extract(len as usize, "policy uri")?;
                } else if len < -1 {
                    return Err(ExtractError::MalformedOpn("policy length"));
                }
                State::ParseCertLength
            }
            State::ParseCertLength => {
                declared = swap_length_bytes(cur.extract4("certificate length")?);
                match declared {
                    0 => return Err(ExtractError::ZeroLengthCertificate),
                    n => State::CheckCertLength(n),
                }
            }
            State::CheckCertLength(n) => {
                let limit = max_certificate_len(max_chunks);
                if n as usize > limit {
                    return Err(ExtractError::CertificateTooLong { declared: n, limit });
                }
                if n as usize > BLOCK_LEN - 1 {
                    State::ParseCertificate { remaining: n as usize }
                } else {
                    State::ParseCertificateEndingPartOnly { len: n as usize }
                }
            }
            State::ParseCertificate { remaining } => {
                chunks.push(cur.extract(BLOCK_LEN, "certificate block")?.to_vec());
                let remaining = remaining - BLOCK_LEN;
                if remaining > BLOCK_LEN - 1 {
                    State::ParseCertificate { remaining }
                } else {
                    State::ParseCertificateEndingPart { remaining }
                }
            }
            State::ParseCertificateEndingPart { remaining } => {
                // a length that is a multiple of the block size leaves nothing
                if remaining > 0 {
                    chunks.push(cur.extract(remaining, "certificate tail")?.to_vec());
                }
                State::ParseThumbprint
            }
            State::ParseCertificateEndingPartOnly { len } => {
                chunks.push(cur.extract(len, "certificate")?.to_vec());
                State::ParseThumbprint
            }
            State::ParseThumbprint => {
                let len = swap_length_bytes(cur.extract4("thumbprint length")?) as i32;
                receiver = match len {
                    -1 => None,
                    20 => {
                        let b = cur.extract(THUMBPRINT_LEN, "thumbprint")?;
                        let mut t = [0u8; THUMBPRINT_LEN];
                        t.copy_from_slice(b);
                        Some(Thumbprint(t))
                    }
                    _ => return Err(ExtractError::MalformedOpn("thumbprint length")),
                };
                State::Accept
            }
            State::Accept => break,
        };
    }

    Ok(Extraction {
        certificate: CertChunks {
            chunks,
            declared_length: declared,
            max_chunks,
        },
        receiver_thumbprint: receiver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_opn, encode_opn, AsymmetricSecurityHeader, OpnMessage, SECURITY_POLICY_BASIC256SHA256};
    use proptest::prelude::*;

    fn opn_with_cert(len: usize) -> Vec<u8> {
        let cert: Vec<u8> = (0..len).map(|i| (i * 7 + 3) as u8).collect();
        let sh = AsymmetricSecurityHeader::new(SECURITY_POLICY_BASIC256SHA256, Some(cert), Some([9; 20]));
        encode_opn(&OpnMessage::new(0, sh, 1, 1, vec![0xAB; 64])).unwrap()
    }

    fn sizes(len: usize) -> Vec<usize> {
        let chunk = opn_with_cert(len);
        let ex = extract_certificate(&chunk, DEFAULT_MAX_CHUNKS).unwrap();
        ex.certificate.chunks.iter().map(Vec::len).collect()
    }

    #[test]
    fn byte_reversal() {
        assert_eq!(swap_length_bytes([0x3A, 0x04, 0x00, 0x00]), 1082);
        assert_eq!(swap_length_bytes([0, 0, 0, 0]), 0);
        assert_eq!(swap_length_bytes([0x00, 0x64, 0x00, 0x00]), 25600);
    }

    #[test]
    fn block_layout() {
        assert_eq!(sizes(600), vec![256, 256, 88]);
        assert_eq!(sizes(200), vec![200]);
        assert_eq!(sizes(255), vec![255]);
        assert_eq!(sizes(256), vec![256]);
        assert_eq!(sizes(257), vec![256, 1]);
        let full = sizes(25600);
        assert_eq!(full.len(), 100);
        assert!(full.iter().all(|&n| n == 256));
    }

    #[test]
    fn zero_and_oversize_are_rejected() {
        assert_eq!(
            extract_certificate(&opn_with_cert(0), 100),
            Err(ExtractError::ZeroLengthCertificate)
        );
        assert_eq!(
            extract_certificate(&opn_with_cert(25601), 100),
            Err(ExtractError::CertificateTooLong { declared: 25601, limit: 25600 })
        );
        assert!(extract_certificate(&opn_with_cert(600), 2).is_err());
    }

    #[test]
    fn null_certificate_is_too_long() {
        let sh = AsymmetricSecurityHeader::new(SECURITY_POLICY_BASIC256SHA256, None, None);
        let chunk = encode_opn(&OpnMessage::new(0, sh, 1, 1, vec![])).unwrap();
        assert!(matches!(
            extract_certificate(&chunk, 100),
            Err(ExtractError::CertificateTooLong { declared: u32::MAX, .. })
        ));
    }

    #[test]
    fn truncated_chunk_is_malformed() {
        let mut chunk = opn_with_cert(600);
        chunk.truncate(300);
        let n = chunk.len() as u32;
        chunk[4..8].copy_from_slice(&n.to_le_bytes());
        assert!(matches!(extract_certificate(&chunk, 100), Err(ExtractError::MalformedOpn(_))));
    }

    #[test]
    fn captured_chunk_matches_decoder() {
        let chunk = include_bytes!("../../fixtures/opn_request_basic256sha256.bin");
        let ex = extract_certificate(chunk, 100).unwrap();
        let decoded = decode_opn(chunk).unwrap();
        assert_eq!(ex.certificate.declared_length, 797);
        assert_eq!(ex.certificate.concat(), decoded.sender_certificate().unwrap());
        assert_eq!(
            ex.receiver_thumbprint.unwrap().to_hex(),
            "83315b380bfc86e19cc85d0177af8ec93092920d"
        );
        assert_eq!(
            ex.certificate.thumbprint().to_hex(),
            "7f7b764c758bbf12de4d122a729c8ca22c5e5fcd"
        );
    }

    proptest! {
        #[test]
        fn concatenation_matches_decoder(len in 1usize..=25600) {
            let chunk = opn_with_cert(len);
            let ex = extract_certificate(&chunk, 100).unwrap();
            let decoded = decode_opn(&chunk).unwrap();
            prop_assert_eq!(ex.certificate.concat(), decoded.sender_certificate().unwrap());
            let (last, body) = ex.certificate.chunks.split_last().unwrap();
            prop_assert!(body.iter().all(|c| c.len() == 256));
            prop_assert!(!last.is_empty() && last.len() <= 256);
        }

        #[test]
        fn never_panics_on_noise(bytes in proptest::collection::vec(any::<u8>(), 0..600)) {
            let _ = extract_certificate(&bytes, 100);
        }
    }
}
