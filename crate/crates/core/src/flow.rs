//! Bidirectional flow assembly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{Endpoint, PacketRecord, Protocol, TcpFlags, Timestamp};

/// Unordered 5-tuple: `a` is always the lexicographically smaller endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub protocol: Protocol,
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, protocol: Protocol) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        FlowKey { a, b, protocol }
    }

    pub fn of(packet: &PacketRecord) -> Self {
        FlowKey::new(packet.source(), packet.destination(), packet.protocol)
    }
}

/// Idle and active timeouts governing when a key starts a fresh flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTimeouts {
    idle_s: f64,
    active_s: Option<f64>,
}

impl FlowTimeouts {
    pub const DEFAULT_IDLE_S: f64 = 120.0;
    pub const DEFAULT_ACTIVE_S: f64 = 1800.0;

    /// `active_s = None` disables the active timeout.
    pub fn new(idle_s: f64, active_s: Option<f64>) -> Result<Self> {
        if !(idle_s > 0.0 && idle_s.is_finite()) {
            return Err(Error::Config(format!(
                "flow.idle_timeout_s must be a positive number, got {idle_s}"
            )));
        }
        if let Some(active) = active_s {
            if !(active > idle_s) {
                return Err(Error::Config(format!(
                    "flow.active_timeout_s ({active}) must exceed flow.idle_timeout_s ({idle_s})"
                )));
            }
        }
        Ok(FlowTimeouts { idle_s, active_s })
    }

    pub fn idle_s(&self) -> f64 {
        self.idle_s
    }

    pub fn active_s(&self) -> Option<f64> {
        self.active_s
    }
}

impl Default for FlowTimeouts {
    fn default() -> Self {
        FlowTimeouts {
            idle_s: Self::DEFAULT_IDLE_S,
            active_s: Some(Self::DEFAULT_ACTIVE_S),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiFlow {
    pub key: FlowKey,
    /// Source of the flow's first packet.
    pub initiator: Endpoint,
    pub fwd_packets: Vec<PacketRecord>,
    pub bwd_packets: Vec<PacketRecord>,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
}

impl BiFlow {
    fn open(first: PacketRecord) -> Self {
        BiFlow {
            key: FlowKey::of(&first),
            initiator: first.source(),
            start_time: first.timestamp,
            end_time: first.timestamp,
            fwd_packets: vec![first],
            bwd_packets: Vec::new(),
        }
    }

    pub fn responder(&self) -> Endpoint {
        if self.key.a == self.initiator {
            self.key.b
        } else {
            self.key.a
        }
    }

    pub fn packet_count(&self) -> usize {
        self.fwd_packets.len() + self.bwd_packets.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.end_time.secs_since(self.start_time)
    }
}

struct OpenFlow {
    index: usize,
    last_seen: Timestamp,
    fin_fwd: bool,
    fin_bwd: bool,
    reset: bool,
}

impl OpenFlow {
    fn closed(&self) -> bool {
        self.reset || (self.fin_fwd && self.fin_bwd)
    }
}

/// Groups packets into bidirectional flows.
///
/// Packets are first stably sorted by timestamp (ties keep input order). A key
/// starts a new flow when the gap since its previous packet exceeds the idle
/// timeout, when the flow is older than the active timeout, or when the
/// previous flow was closed by RST or by FIN in both directions. Flows are
/// returned in order of their first packet.
pub fn assemble_flows(packets: &[PacketRecord], timeouts: &FlowTimeouts) -> Vec<BiFlow> {
    let mut ordered: Vec<PacketRecord> = packets.to_vec();
    ordered.sort_by_key(|p| p.timestamp);

    let mut flows: Vec<BiFlow> = Vec::new();
    let mut open: HashMap<FlowKey, OpenFlow> = HashMap::new();

    for pkt in ordered {
        let key = FlowKey::of(&pkt);
        let reuse = open.get(&key).is_some_and(|state| {
            let flow = &flows[state.index];
            let gap = pkt.timestamp.secs_since(state.last_seen);
            let age = pkt.timestamp.secs_since(flow.start_time);
            !(gap > timeouts.idle_s || timeouts.active_s.is_some_and(|active| age > active) || state.closed())
        });

        if !reuse {
            let index = flows.len();
            flows.push(BiFlow::open(pkt));
            let mut state = OpenFlow {
                index,
                last_seen: pkt.timestamp,
                fin_fwd: false,
                fin_bwd: false,
                reset: false,
            };
            note_flags(&mut state, pkt.tcp_flags, true);
            open.insert(key, state);
            continue;
        }

        let state = open.get_mut(&key).expect("checked above");
        let flow = &mut flows[state.index];
        let forward = pkt.source() == flow.initiator;
        if forward {
            flow.fwd_packets.push(pkt);
        } else {
            flow.bwd_packets.push(pkt);
        }
        flow.end_time = flow.end_time.max(pkt.timestamp);
        state.last_seen = pkt.timestamp;
        note_flags(state, pkt.tcp_flags, forward);
    }
    flows
}

fn note_flags(state: &mut OpenFlow, flags: TcpFlags, forward: bool) {
    if flags.contains(TcpFlags::RST) {
        state.reset = true;
    }
    if flags.contains(TcpFlags::FIN) {
        if forward {
            state.fin_fwd = true;
        } else {
            state.fin_bwd = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;

    fn pkt(t: f64, src: (u8, u16), dst: (u8, u16), flags: TcpFlags) -> PacketRecord {
        PacketRecord {
            timestamp: Timestamp::from_secs_f64(t),
            src_ip: Ipv4Addr::new(10, 0, 0, src.0),
            dst_ip: Ipv4Addr::new(10, 0, 0, dst.0),
            src_port: src.1,
            dst_port: dst.1,
            protocol: Protocol::Tcp,
            ip_total_length: 60,
            tcp_flags: flags,
        }
    }

    const A: (u8, u16) = (1, 1234);
    const B: (u8, u16) = (2, 80);

    #[test]
    fn key_is_unordered() {
        let p = pkt(0.0, A, B, TcpFlags::SYN);
        let q = pkt(0.0, B, A, TcpFlags::SYN);
        assert_eq!(FlowKey::of(&p), FlowKey::of(&q));
        let k = FlowKey::of(&q);
        assert!(k.a <= k.b);
    }

    #[test]
    fn request_and_reply_form_one_flow() {
        let packets = [
            pkt(0.0, A, B, TcpFlags::SYN),
            pkt(1.0, B, A, TcpFlags::SYN | TcpFlags::ACK),
        ];
        let flows = assemble_flows(&packets, &FlowTimeouts::default());
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].fwd_packets.len(), 1);
        assert_eq!(flows[0].bwd_packets.len(), 1);
        assert_eq!(flows[0].initiator, Endpoint::new(Ipv4Addr::new(10, 0, 0, 1), 1234));
        assert_eq!(flows[0].responder().port, 80);
    }

    #[test]
    fn idle_gap_splits_flows() {
        let packets = [pkt(0.0, A, B, TcpFlags::ACK), pkt(200.0, A, B, TcpFlags::ACK)];
        let flows = assemble_flows(&packets, &FlowTimeouts::new(120.0, None).unwrap());
        assert_eq!(flows.len(), 2);
        assert!(flows.iter().all(|f| f.packet_count() == 1));
    }

    #[test]
    fn active_timeout_splits_long_flows() {
        let packets: Vec<_> = (0..10)
            .map(|i| pkt(f64::from(i) * 100.0, A, B, TcpFlags::ACK))
            .collect();
        let flows = assemble_flows(&packets, &FlowTimeouts::new(120.0, Some(450.0)).unwrap());
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].packet_count(), 5);
    }

    #[test]
    fn rst_closes_the_flow() {
        let packets = [
            pkt(0.0, A, B, TcpFlags::SYN),
            pkt(0.1, B, A, TcpFlags::RST | TcpFlags::ACK),
            pkt(0.2, A, B, TcpFlags::SYN),
        ];
        let flows = assemble_flows(&packets, &FlowTimeouts::default());
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[1].initiator.port, 1234);
    }

    #[test]
    fn fin_in_both_directions_closes_the_flow() {
        let packets = [
            pkt(0.0, A, B, TcpFlags::FIN | TcpFlags::ACK),
            pkt(0.1, A, B, TcpFlags::ACK),
            pkt(0.2, B, A, TcpFlags::FIN | TcpFlags::ACK),
            pkt(0.3, A, B, TcpFlags::ACK),
        ];
        let flows = assemble_flows(&packets, &FlowTimeouts::default());
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].packet_count(), 3);
    }

    #[test]
    fn packets_are_sorted_stably_before_assembly() {
        let packets = [pkt(5.0, B, A, TcpFlags::ACK), pkt(1.0, A, B, TcpFlags::SYN)];
        let flows = assemble_flows(&packets, &FlowTimeouts::default());
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].initiator.port, 1234);
        assert_eq!(flows[0].start_time, Timestamp::from_secs_f64(1.0));
        assert_eq!(flows[0].end_time, Timestamp::from_secs_f64(5.0));
    }

    #[test]
    fn empty_input() {
        assert!(assemble_flows(&[], &FlowTimeouts::default()).is_empty());
    }

    #[test]
    fn invalid_timeouts() {
        assert!(FlowTimeouts::new(0.0, None).is_err());
        assert!(FlowTimeouts::new(120.0, Some(60.0)).is_err());
        assert!(FlowTimeouts::new(f64::NAN, None).is_err());
    }
}
