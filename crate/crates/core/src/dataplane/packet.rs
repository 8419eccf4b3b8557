//! Ethernet / IPv4 / TCP header parsing for captured frames.

use std::net::{Ipv4Addr, SocketAddrV4};
use std::ops::Range;

use etherparse::{EtherType, Ethernet2HeaderSlice, IpNumber, Ipv4HeaderSlice, TcpHeaderSlice};
use thiserror::Error;

use crate::codec::MessageType;

pub const DEFAULT_OPCUA_PORT: u16 = 4840;
pub const ETHERNET_HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("frame truncated in {0} header")]
    TruncatedFrame(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EthernetInfo {
    pub source: [u8; 6],
    pub destination: [u8; 6],
    pub ethertype: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Info {
    pub source: Ipv4Addr,
    pub destination: Ipv4Addr,
    pub protocol: u8,
    pub total_len: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags {
    pub syn: bool,
    pub ack: bool,
    pub fin: bool,
    pub rst: bool,
    pub psh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpInfo {
    pub source_port: u16,
    pub destination_port: u16,
    pub sequence_number: u32,
    pub acknowledgment_number: u32,
    pub flags: TcpFlags,
    /// Payload position inside the frame.
    pub payload: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub eth: EthernetInfo,
    pub ipv4: Option<Ipv4Info>,
    pub tcp: Option<TcpInfo>,
    pub opcua_tag: bool,
}

impl ParsedPacket {
    pub fn payload<'a>(&self, frame: &'a [u8]) -> &'a [u8] {
        self.tcp.as_ref().map_or(&[], |t| &frame[t.payload.clone()])
    }

    pub fn endpoints(&self) -> Option<(SocketAddrV4, SocketAddrV4)> {
        let ip = self.ipv4?;
        let tcp = self.tcp.as_ref()?;
        Some((
            SocketAddrV4::new(ip.source, tcp.source_port),
            SocketAddrV4::new(ip.destination, tcp.destination_port),
        ))
    }

    pub fn touches_port(&self, port: u16) -> bool {
        self.tcp
            .as_ref()
            .is_some_and(|t| t.source_port == port || t.destination_port == port)
    }
}

/// Parses one frame. Non-IPv4 and non-TCP traffic is returned without the
/// missing layers and is never tagged.
///
/// The tag set here only looks at this frame: payload that starts an OPN
/// chunk. Stream-aware tagging, where continuation segments are tagged too,
/// is done by [`crate::dataplane::FrameProcessor`].
pub fn parse_packet(frame: &[u8], opcua_port: u16) -> Result<ParsedPacket, PacketError> {
    let eth = Ethernet2HeaderSlice::from_slice(frame).map_err(|_| PacketError::TruncatedFrame("ethernet"))?;
    let eth_info = EthernetInfo {
        source: eth.source(),
        destination: eth.destination(),
        ethertype: eth.ether_type().0,
    };
    let mut parsed = ParsedPacket {
        eth: eth_info,
        ipv4: None,
        tcp: None,
        opcua_tag: false,
    };
    if eth.ether_type() != EtherType::IPV4 {
        return Ok(parsed);
    }

    let ip_start = eth.slice().len();
    let ip = Ipv4HeaderSlice::from_slice(&frame[ip_start..]).map_err(|_| PacketError::TruncatedFrame("ipv4"))?;
    let total_len = ip.total_len() as usize;
    if frame.len() < ip_start + total_len || total_len < ip.slice().len() {
        return Err(PacketError::TruncatedFrame("ipv4"));
    }
    parsed.ipv4 = Some(Ipv4Info {
        source: ip.source_addr(),
        destination: ip.destination_addr(),
        protocol: ip.protocol().0,
        total_len: ip.total_len(),
    });
    if ip.protocol() != IpNumber::TCP {
        return Ok(parsed);
    }

    let tcp_start = ip_start + ip.slice().len();
    let ip_end = ip_start + total_len;
    let tcp = TcpHeaderSlice::from_slice(&frame[tcp_start..ip_end]).map_err(|_| PacketError::TruncatedFrame("tcp"))?;
    let payload = tcp_start + tcp.slice().len()..ip_end;
    parsed.tcp = Some(TcpInfo {
        source_port: tcp.source_port(),
        destination_port: tcp.destination_port(),
        sequence_number: tcp.sequence_number(),
        acknowledgment_number: tcp.acknowledgment_number(),
        flags: TcpFlags {
            syn: tcp.syn(),
            ack: tcp.ack(),
            fin: tcp.fin(),
            rst: tcp.rst(),
            psh: tcp.psh(),
        },
        payload,
    });
    parsed.opcua_tag = parsed.touches_port(opcua_port)
        && parsed.payload(frame).starts_with(MessageType::OpenSecureChannel.code());
    Ok(parsed)
}
