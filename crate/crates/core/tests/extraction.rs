use std::sync::Arc;

use proptest::prelude::*;
use trustgate_core::cert::hash_thumbprint;
use trustgate_core::codec::{decode_opn, encode_opn, AsymmetricSecurityHeader, OpnMessage, SECURITY_POLICY_BASIC256SHA256};
use trustgate_core::dataplane::{
    extract_certificate, ChunkFramer, DropReason, Pipeline, PipelineConfig, ThumbprintTable, Verdict,
};

fn opn(cert: Vec<u8>, policy: &str) -> Vec<u8> {
    let sh = AsymmetricSecurityHeader::new(policy, Some(cert), Some([3; 20]));
    encode_opn(&OpnMessage::new(4, sh, 9, 2, vec![1, 2, 3])).unwrap()
}

fn pipeline(trusted: &[&[u8]]) -> Pipeline {
    let table = Arc::new(ThumbprintTable::new(8));
    for c in trusted {
        table.install(hash_thumbprint(c).unwrap()).unwrap();
    }
    Pipeline::new(PipelineConfig::default(), table)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocks_reassemble_to_the_decoded_certificate(
        cert in proptest::collection::vec(any::<u8>(), 1..=25600),
        policy in prop_oneof![Just(SECURITY_POLICY_BASIC256SHA256), Just("urn:x"), Just("")],
    ) {
        let chunk = opn(cert.clone(), policy);
        let ex = extract_certificate(&chunk, 100).unwrap();
        let decoded = decode_opn(&chunk).unwrap();
        prop_assert_eq!(ex.certificate.concat(), decoded.sender_certificate().unwrap());
        prop_assert_eq!(ex.certificate.len(), cert.len().div_ceil(256));
        prop_assert_eq!(ex.certificate.thumbprint(), hash_thumbprint(&cert).unwrap());
    }

    #[test]
    fn verdict_follows_table_membership(cert in proptest::collection::vec(any::<u8>(), 1..2000), trusted: bool) {
        let p = if trusted { pipeline(&[&cert]) } else { pipeline(&[]) };
        let d = p.process_chunk(&opn(cert.clone(), SECURITY_POLICY_BASIC256SHA256));
        prop_assert!(d.tagged);
        let expected = if trusted { Verdict::Allow } else { Verdict::Drop(DropReason::UntrustedThumbprint) };
        prop_assert_eq!(d.verdict, expected);
    }

    #[test]
    fn framing_is_independent_of_segmentation(
        certs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..700), 1..6),
        cuts in proptest::collection::vec(1usize..500, 0..20),
    ) {
        let stream: Vec<u8> = certs.iter().flat_map(|c| opn(c.clone(), "")).collect();
        let mut f = ChunkFramer::new(1 << 16);
        let mut units = Vec::new();
        let mut rest = &stream[..];
        for c in cuts {
            let (a, b) = rest.split_at(c.min(rest.len()));
            units.extend(f.push(a).unwrap());
            rest = b;
        }
        units.extend(f.push(rest).unwrap());
        prop_assert_eq!(units.len(), certs.len());
        prop_assert!(units.iter().all(|u| u.is_opn()));
        let joined: Vec<u8> = units.iter().flat_map(|u| u.bytes().to_vec()).collect();
        prop_assert_eq!(joined, stream);
    }
}

#[test]
fn zero_length_and_null_certificates_drop() {
    let p = pipeline(&[]);
    assert_eq!(
        p.process_chunk(&opn(Vec::new(), "")).verdict,
        Verdict::Drop(DropReason::ZeroLengthCertificate)
    );
    let sh = AsymmetricSecurityHeader::new("", None, None);
    let chunk = encode_opn(&OpnMessage::new(0, sh, 1, 1, vec![])).unwrap();
    assert_eq!(p.process_chunk(&chunk).verdict, Verdict::Drop(DropReason::CertificateTooLong));
}

#[test]
fn validation_disabled_allows_everything() {
    let p = Pipeline::new(
        PipelineConfig {
            validation_enabled: false,
            ..PipelineConfig::default()
        },
        Arc::new(ThumbprintTable::new(1)),
    );
    let d = p.process_chunk(&opn(Vec::new(), ""));
    assert!(d.tagged);
    assert_eq!(d.verdict, Verdict::Allow);
}

#[test]
fn captured_handshake_certificates() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for name in ["opn_request_basic256sha256.bin", "opn_response_basic256sha256.bin"] {
        let chunk = std::fs::read(dir.join(name)).unwrap();
        let cert = decode_opn(&chunk).unwrap().sender_certificate().unwrap().to_vec();
        assert_eq!(pipeline(&[&cert]).process_chunk(&chunk).verdict, Verdict::Allow, "{name}");
        assert_eq!(
            pipeline(&[]).process_chunk(&chunk).verdict,
            Verdict::Drop(DropReason::UntrustedThumbprint),
            "{name}"
        );
    }
}
