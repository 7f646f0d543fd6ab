//! Classic (libpcap) capture file reader.
//!
//! Only IPv4 TCP and UDP packets are turned into [`PacketRecord`]s. Anything
//! else the reader recognises as a well-formed frame (ARP, IPv6, VLAN-tagged
//! frames, fragments, other IP protocols, frames cut short by the snap length)
//! is skipped and tallied in [`SkipCounts`]. Structural damage to the file
//! itself is an error that names the byte offset where parsing stopped.

use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{PacketRecord, Protocol, TcpFlags, Timestamp};

pub const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
pub const MAGIC_NANOS: u32 = 0xA1B2_3C4D;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

pub(crate) const GLOBAL_HEADER_LEN: usize = 24;
pub(crate) const RECORD_HEADER_LEN: usize = 16;
pub(crate) const ETHERNET_HEADER_LEN: usize = 14;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88A8;

/// Why frames were dropped while reading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    /// Ethernet frames that do not carry IPv4 (ARP, IPv6, ...).
    pub non_ipv4: usize,
    pub vlan_tagged: usize,
    pub fragments: usize,
    /// IPv4 packets whose protocol is neither TCP nor UDP.
    pub other_protocol: usize,
    /// Frames too short to hold the headers they announce.
    pub truncated: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.non_ipv4 + self.vlan_tagged + self.fragments + self.other_protocol + self.truncated
    }
}

/// Result of reading one capture: accepted packets in file order plus skip tallies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Capture {
    pub packets: Vec<PacketRecord>,
    pub skipped: SkipCounts,
    pub link_type: u32,
}

/// Reads a classic pcap file from disk.
pub fn read_pcap(path: impl AsRef<Path>) -> Result<Capture> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pcap(&bytes)
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let arr = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(arr),
            Endian::Big => u32::from_be_bytes(arr),
        }
    }
}

/// Parses an in-memory classic pcap image.
pub fn parse_pcap(bytes: &[u8]) -> Result<Capture> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(Error::Pcap {
            offset: 0,
            reason: format!(
                "file holds {} bytes, a pcap global header needs {GLOBAL_HEADER_LEN}",
                bytes.len()
            ),
        });
    }
    let le_magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (endian, nanos) = match le_magic {
        MAGIC_MICROS => (Endian::Little, false),
        MAGIC_NANOS => (Endian::Little, true),
        m if m == MAGIC_MICROS.swap_bytes() => (Endian::Big, false),
        m if m == MAGIC_NANOS.swap_bytes() => (Endian::Big, true),
        m => {
            return Err(Error::Pcap {
                offset: 0,
                reason: format!("bad magic number {m:#010x} (pcapng is not supported)"),
            })
        }
    };
    let link_type = endian.u32(&bytes[20..24]);
    if link_type != LINKTYPE_ETHERNET && link_type != LINKTYPE_RAW {
        return Err(Error::Pcap {
            offset: 20,
            reason: format!("unsupported link type {link_type}"),
        });
    }

    let mut capture = Capture {
        link_type,
        ..Capture::default()
    };
    let mut offset = GLOBAL_HEADER_LEN;
    while offset < bytes.len() {
        if bytes.len() - offset < RECORD_HEADER_LEN {
            return Err(Error::Pcap {
                offset: offset as u64,
                reason: "truncated packet record header".into(),
            });
        }
        let hdr = &bytes[offset..offset + RECORD_HEADER_LEN];
        let ts_sec = endian.u32(&hdr[0..4]) as u64;
        let ts_frac = endian.u32(&hdr[4..8]) as u64;
        let incl_len = endian.u32(&hdr[8..12]) as usize;
        let data_start = offset + RECORD_HEADER_LEN;
        if bytes.len() - data_start < incl_len {
            return Err(Error::Pcap {
                offset: offset as u64,
                reason: format!(
                    "record announces {incl_len} captured bytes but only {} remain",
                    bytes.len() - data_start
                ),
            });
        }
        let frac_nanos = if nanos { ts_frac } else { ts_frac * 1_000 };
        if frac_nanos >= 1_000_000_000 {
            return Err(Error::Pcap {
                offset: offset as u64 + 4,
                reason: format!("sub-second timestamp field {ts_frac} out of range"),
            });
        }
        let timestamp = Timestamp::from_nanos(ts_sec * 1_000_000_000 + frac_nanos);
        let frame = &bytes[data_start..data_start + incl_len];
        let ip = match link_type {
            LINKTYPE_ETHERNET => strip_ethernet(frame, &mut capture.skipped),
            _ => Some(frame),
        };
        if let Some(ip) = ip {
            match parse_ipv4(ip, timestamp) {
                Ok(pkt) => capture.packets.push(pkt),
                Err(reason) => reason.tally(&mut capture.skipped),
            }
        }
        offset = data_start + incl_len;
    }
    Ok(capture)
}

fn strip_ethernet<'a>(frame: &'a [u8], skipped: &mut SkipCounts) -> Option<&'a [u8]> {
    if frame.len() < ETHERNET_HEADER_LEN {
        skipped.truncated += 1;
        return None;
    }
    match u16::from_be_bytes([frame[12], frame[13]]) {
        ETHERTYPE_IPV4 => Some(&frame[ETHERNET_HEADER_LEN..]),
        ETHERTYPE_VLAN | ETHERTYPE_QINQ => {
            skipped.vlan_tagged += 1;
            None
        }
        _ => {
            skipped.non_ipv4 += 1;
            None
        }
    }
}

enum Skip {
    NotIpv4,
    Fragment,
    OtherProtocol,
    Truncated,
}

impl Skip {
    fn tally(self, counts: &mut SkipCounts) {
        match self {
            Skip::NotIpv4 => counts.non_ipv4 += 1,
            Skip::Fragment => counts.fragments += 1,
            Skip::OtherProtocol => counts.other_protocol += 1,
            Skip::Truncated => counts.truncated += 1,
        }
    }
}

fn parse_ipv4(ip: &[u8], timestamp: Timestamp) -> std::result::Result<PacketRecord, Skip> {
    if ip.is_empty() {
        return Err(Skip::Truncated);
    }
    if ip[0] >> 4 != 4 {
        return Err(Skip::NotIpv4);
    }
    if ip.len() < 20 {
        return Err(Skip::Truncated);
    }
    let ihl = usize::from(ip[0] & 0x0F) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(Skip::Truncated);
    }
    let total_length = u16::from_be_bytes([ip[2], ip[3]]);
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    let more_fragments = frag & 0x2000 != 0;
    if more_fragments || frag & 0x1FFF != 0 {
        return Err(Skip::Fragment);
    }
    let protocol = Protocol::from_ip_number(ip[9]).ok_or(Skip::OtherProtocol)?;
    if usize::from(total_length) < ihl + usize::from(protocol.min_ip_total_length() - 20) {
        return Err(Skip::Truncated);
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let transport = &ip[ihl..];
    let needed = match protocol {
        Protocol::Tcp => 14,
        Protocol::Udp => 4,
    };
    if transport.len() < needed {
        return Err(Skip::Truncated);
    }
    let src_port = u16::from_be_bytes([transport[0], transport[1]]);
    let dst_port = u16::from_be_bytes([transport[2], transport[3]]);
    let tcp_flags = match protocol {
        Protocol::Tcp => TcpFlags::from_bits_truncate(transport[13]),
        Protocol::Udp => TcpFlags::empty(),
    };
    Ok(PacketRecord {
        timestamp,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        ip_total_length: total_length,
        tcp_flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global_header(magic: u32, link: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&magic.to_le_bytes());
        v.extend_from_slice(&2u16.to_le_bytes());
        v.extend_from_slice(&4u16.to_le_bytes());
        v.extend_from_slice(&0i32.to_le_bytes());
        v.extend_from_slice(&0u32.to_le_bytes());
        v.extend_from_slice(&65535u32.to_le_bytes());
        v.extend_from_slice(&link.to_le_bytes());
        v
    }

    fn record(buf: &mut Vec<u8>, sec: u32, frac: u32, frame: &[u8]) {
        buf.extend_from_slice(&sec.to_le_bytes());
        buf.extend_from_slice(&frac.to_le_bytes());
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        buf.extend_from_slice(frame);
    }

    fn ipv4_tcp(total_len: u16, flags: u8) -> Vec<u8> {
        let mut ip = vec![0u8; usize::from(total_len)];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&total_len.to_be_bytes());
        ip[8] = 64;
        ip[9] = 6;
        ip[12..16].copy_from_slice(&[10, 0, 0, 1]);
        ip[16..20].copy_from_slice(&[10, 0, 0, 2]);
        ip[20..22].copy_from_slice(&1234u16.to_be_bytes());
        ip[22..24].copy_from_slice(&80u16.to_be_bytes());
        ip[32] = 0x50;
        ip[33] = flags;
        ip
    }

    fn ethernet(ethertype: u16, payload: &[u8]) -> Vec<u8> {
        let mut f = vec![0u8; 12];
        f.extend_from_slice(&ethertype.to_be_bytes());
        f.extend_from_slice(payload);
        f
    }

    #[test]
    fn single_syn_packet() {
        let mut file = global_header(MAGIC_MICROS, LINKTYPE_ETHERNET);
        record(&mut file, 10, 500, &ethernet(0x0800, &ipv4_tcp(60, 0x02)));
        let cap = parse_pcap(&file).unwrap();
        assert_eq!(cap.packets.len(), 1);
        let p = cap.packets[0];
        assert_eq!(p.tcp_flags, TcpFlags::SYN);
        assert_eq!(p.ip_total_length, 60);
        assert_eq!(p.src_port, 1234);
        assert_eq!(p.dst_port, 80);
        assert_eq!(p.timestamp, Timestamp::from_micros(10_000_500));
    }

    #[test]
    fn arp_frame_is_skipped_and_counted() {
        let mut file = global_header(MAGIC_MICROS, LINKTYPE_ETHERNET);
        record(&mut file, 1, 0, &ethernet(0x0800, &ipv4_tcp(40, 0x10)));
        record(&mut file, 2, 0, &ethernet(0x0806, &[0u8; 28]));
        let cap = parse_pcap(&file).unwrap();
        assert_eq!(cap.packets.len(), 1);
        assert_eq!(cap.skipped.non_ipv4, 1);
        assert_eq!(cap.skipped.total(), 1);
    }

    #[test]
    fn vlan_fragment_and_icmp_are_skipped() {
        let mut file = global_header(MAGIC_MICROS, LINKTYPE_ETHERNET);
        record(&mut file, 1, 0, &ethernet(0x8100, &[0u8; 50]));
        let mut frag = ipv4_tcp(40, 0x10);
        frag[6] = 0x20;
        record(&mut file, 1, 0, &ethernet(0x0800, &frag));
        let mut icmp = ipv4_tcp(40, 0);
        icmp[9] = 1;
        record(&mut file, 1, 0, &ethernet(0x0800, &icmp));
        let cap = parse_pcap(&file).unwrap();
        assert!(cap.packets.is_empty());
        assert_eq!(
            cap.skipped,
            SkipCounts {
                vlan_tagged: 1,
                fragments: 1,
                other_protocol: 1,
                ..SkipCounts::default()
            }
        );
    }

    #[test]
    fn big_endian_and_nanosecond_magic() {
        let mut file = Vec::new();
        file.extend_from_slice(&MAGIC_NANOS.to_be_bytes());
        file.extend_from_slice(&[0, 2, 0, 4]);
        file.extend_from_slice(&[0; 8]);
        file.extend_from_slice(&65535u32.to_be_bytes());
        file.extend_from_slice(&LINKTYPE_RAW.to_be_bytes());
        let frame = ipv4_tcp(40, 0x11);
        file.extend_from_slice(&3u32.to_be_bytes());
        file.extend_from_slice(&7u32.to_be_bytes());
        file.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        file.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        file.extend_from_slice(&frame);
        let cap = parse_pcap(&file).unwrap();
        assert_eq!(cap.link_type, LINKTYPE_RAW);
        assert_eq!(cap.packets[0].timestamp.as_nanos(), 3_000_000_007);
        assert_eq!(cap.packets[0].tcp_flags, TcpFlags::FIN | TcpFlags::ACK);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut file = global_header(0x0A0D_0D0A, LINKTYPE_ETHERNET);
        file.truncate(24);
        match parse_pcap(&file) {
            Err(Error::Pcap { offset: 0, reason }) => assert!(reason.contains("magic")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_record_header_names_offset() {
        let mut file = global_header(MAGIC_MICROS, LINKTYPE_ETHERNET);
        record(&mut file, 1, 0, &ethernet(0x0800, &ipv4_tcp(40, 0x10)));
        let second = file.len();
        file.extend_from_slice(&[0u8; 7]);
        match parse_pcap(&file) {
            Err(Error::Pcap { offset, .. }) => assert_eq!(offset, second as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_packet_body_names_offset() {
        let mut file = global_header(MAGIC_MICROS, LINKTYPE_ETHERNET);
        record(&mut file, 1, 0, &ethernet(0x0800, &ipv4_tcp(40, 0x10)));
        file.truncate(file.len() - 5);
        match parse_pcap(&file) {
            Err(Error::Pcap { offset, .. }) => assert_eq!(offset, 24),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn output_keeps_file_order() {
        let mut file = global_header(MAGIC_MICROS, LINKTYPE_ETHERNET);
        for sec in [5u32, 1, 3] {
            record(&mut file, sec, 0, &ethernet(0x0800, &ipv4_tcp(40, 0x10)));
        }
        let cap = parse_pcap(&file).unwrap();
        let secs: Vec<u64> = cap.packets.iter().map(|p| p.timestamp.split_micros().0).collect();
        assert_eq!(secs, [5, 1, 3]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_pcap("/definitely/not/here.pcap").unwrap_err();
        assert!(err.is_io());
    }
}
