//! Deterministic synthetic traffic with ground-truth labels.
//!
//! A scenario is a list of traffic classes. Each class owns a set of source
//! hosts; every source opens some number of flows toward shared servers.
//! Flow contents (packet counts, sizes, gaps) come from per-class
//! distributions, and source ports follow a per-class pattern.
//!
//! The `mimicking` preset is the interesting one: its attack class reuses the
//! benign per-flow distributions verbatim, so no single flow gives it away.
//! What differs is the shape of each attacker's bundle: many flows from one
//! host, on sequentially allocated source ports.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::capture::{LINKTYPE_ETHERNET, MAGIC_MICROS, MAGIC_NANOS};
use crate::error::{Error, Result};
use crate::features::parse_timestamp;
use crate::flow::BiFlow;
use crate::packet::{Endpoint, PacketRecord, Protocol, TcpFlags, Timestamp};

pub const EPHEMERAL_LOW: u16 = 32768;
pub const EPHEMERAL_HIGH: u16 = 60999;
const MAX_PACKET: f64 = 1500.0;

/// A sampling distribution with explicit, finite parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { mean: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Dist {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Dist::Constant { value } => value.is_finite() && value >= 0.0,
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && 0.0 <= low && low <= high,
            Dist::Exponential { mean } => mean.is_finite() && mean > 0.0,
            Dist::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: invalid distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
            Dist::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            Dist::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
        }
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: u32,
    pub max: u32,
}

impl Range {
    pub fn exactly(n: u32) -> Self {
        Range { min: n, max: n }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PortPattern {
    /// Distinct uniformly random ports in the Linux ephemeral range.
    EphemeralRandom,
    /// `first, first + step, ...` in flow start order, from a random first port.
    Sequential { step: u16 },
    /// Every flow reuses one port (only sensible with varying destinations).
    Fixed { port: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DstPorts {
    /// Each flow picks one of these ports.
    Choice { ports: Vec<u16> },
    /// Flows of a source walk consecutive ports from `first`.
    Sweep { first: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowShape {
    /// Handshake, data exchange, FIN in both directions.
    Session,
    /// SYN answered by RST.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub label: String,
    pub sources: u32,
    /// Servers this class talks to, drawn from the shared server pool.
    pub targets: u32,
    pub flows_per_source: Range,
    /// Data packets per session, excluding handshake and teardown.
    pub data_packets: Range,
    pub fwd_size: Dist,
    pub bwd_size: Dist,
    /// Gap between consecutive packets of a flow, in seconds.
    pub iat: Dist,
    pub src_ports: PortPattern,
    pub dst_ports: DstPorts,
    pub shape: FlowShape,
}

impl ClassSpec {
    fn validate(&self) -> Result<()> {
        let what = format!("class `{}`", self.label);
        if self.label.is_empty() || self.label.contains([',', '"', '\n']) {
            return Err(Error::Config(format!("{what}: labels must be non-empty plain text")));
        }
        if self.sources == 0 || self.targets == 0 {
            return Err(Error::Config(format!(
                "{what}: needs at least one source and one target host"
            )));
        }
        for (name, r) in [
            ("flows_per_source", self.flows_per_source),
            ("data_packets", self.data_packets),
        ] {
            if r.min > r.max || (name == "flows_per_source" && r.min == 0) {
                return Err(Error::Config(format!(
                    "{what}: invalid {name} range {}..={}",
                    r.min, r.max
                )));
            }
        }
        self.fwd_size.validate(&what)?;
        self.bwd_size.validate(&what)?;
        self.iat.validate(&what)?;
        let max_flows = u64::from(self.flows_per_source.max);
        match self.src_ports {
            PortPattern::Sequential { step } => {
                let span = u64::from(step) * max_flows.saturating_sub(1);
                if step == 0 || span > u64::from(EPHEMERAL_HIGH - EPHEMERAL_LOW) {
                    return Err(Error::Config(format!(
                        "{what}: sequential port step {step} does not fit"
                    )));
                }
            }
            PortPattern::EphemeralRandom if max_flows > u64::from(EPHEMERAL_HIGH - EPHEMERAL_LOW) => {
                return Err(Error::Config(format!(
                    "{what}: more flows per source than ephemeral ports"
                )));
            }
            PortPattern::Fixed { .. } if !matches!(self.dst_ports, DstPorts::Sweep { .. }) => {
                return Err(Error::Config(format!(
                    "{what}: a fixed source port needs a destination port sweep to keep flows apart"
                )));
            }
            _ => {}
        }
        match &self.dst_ports {
            DstPorts::Choice { ports } if ports.is_empty() => {
                return Err(Error::Config(format!("{what}: destination port list is empty")))
            }
            DstPorts::Sweep { first } if u64::from(*first) + max_flows > 65536 => {
                return Err(Error::Config(format!("{what}: destination sweep runs past port 65535")))
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Flows start uniformly within `[start_s, start_s + duration_s)`.
    pub duration_s: f64,
    pub start_s: u64,
    pub servers: u32,
    pub classes: Vec<ClassSpec>,
}

/// Per-flow behaviour shared by the benign class and the mimicking attacks.
fn benign_like(label: &str, sources: u32, flows: Range, targets: u32, src_ports: PortPattern) -> ClassSpec {
    ClassSpec {
        label: label.into(),
        sources,
        targets,
        flows_per_source: flows,
        data_packets: Range { min: 2, max: 24 },
        fwd_size: Dist::LogNormal { mu: 5.3, sigma: 0.6 },
        bwd_size: Dist::LogNormal { mu: 6.4, sigma: 0.5 },
        iat: Dist::Exponential { mean: 0.8 },
        src_ports,
        dst_ports: DstPorts::Choice { ports: vec![80, 443] },
        shape: FlowShape::Session,
    }
}

impl ScenarioSpec {
    /// Benign clients plus one slow-DoS class whose flows copy benign statistics.
    pub fn mimicking(seed: u64) -> Self {
        ScenarioSpec {
            seed,
            duration_s: 600.0,
            start_s: 1_500_000_000,
            servers: 8,
            classes: vec![
                benign_like(
                    "benign",
                    150,
                    Range { min: 8, max: 18 },
                    8,
                    PortPattern::EphemeralRandom,
                ),
                benign_like(
                    "slowloris",
                    12,
                    Range::exactly(40),
                    1,
                    PortPattern::Sequential { step: 3 },
                ),
            ],
        }
    }

    /// Benign traffic with two mimicking attacks and two conspicuous ones.
    pub fn five_class(seed: u64) -> Self {
        let mut spec = ScenarioSpec::mimicking(seed);
        spec.classes[0].sources = 120;
        spec.classes[1].sources = 6;
        spec.classes.push(benign_like(
            "slowhttptest",
            4,
            Range::exactly(60),
            1,
            PortPattern::Sequential { step: 1 },
        ));
        spec.classes.push(ClassSpec {
            label: "portscan".into(),
            sources: 2,
            targets: 1,
            flows_per_source: Range::exactly(200),
            data_packets: Range::exactly(0),
            fwd_size: Dist::Constant { value: 44.0 },
            bwd_size: Dist::Constant { value: 40.0 },
            iat: Dist::Exponential { mean: 0.002 },
            src_ports: PortPattern::Fixed { port: 61000 },
            dst_ports: DstPorts::Sweep { first: 1 },
            shape: FlowShape::Probe,
        });
        spec.classes.push(ClassSpec {
            label: "hulk".into(),
            sources: 2,
            targets: 1,
            flows_per_source: Range::exactly(200),
            data_packets: Range { min: 4, max: 12 },
            fwd_size: Dist::Uniform {
                low: 300.0,
                high: 500.0,
            },
            bwd_size: Dist::Constant { value: 1500.0 },
            iat: Dist::Exponential { mean: 0.01 },
            src_ports: PortPattern::EphemeralRandom,
            dst_ports: DstPorts::Choice { ports: vec![80] },
            shape: FlowShape::Session,
        });
        spec
    }

    /// Named presets accepted on the command line.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "mimicking" => Ok(ScenarioSpec::mimicking(seed)),
            "five_class" => Ok(ScenarioSpec::five_class(seed)),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}`; expected mimicking, five_class or fig2"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("scenario has no traffic classes".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!(
                "scenario duration must be positive, got {}",
                self.duration_s
            )));
        }
        if self.servers == 0 || self.servers > 250 {
            return Err(Error::Config(format!(
                "server pool must hold 1..=250 hosts, got {}",
                self.servers
            )));
        }
        if self.classes.len() > 200 {
            return Err(Error::Config("at most 200 traffic classes are supported".into()));
        }
        let mut labels = BTreeSet::new();
        for c in &self.classes {
            c.validate()?;
            if c.targets > self.servers {
                return Err(Error::Config(format!(
                    "class `{}` targets {} servers but the pool holds {}",
                    c.label, c.targets, self.servers
                )));
            }
            if u64::from(c.sources) > 250 * 250 {
                return Err(Error::Config(format!("class `{}` has too many sources", c.label)));
            }
            if !labels.insert(c.label.as_str()) {
                return Err(Error::Config(format!("duplicate class label `{}`", c.label)));
            }
        }
        Ok(())
    }
}

/// Ground truth for one generated flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub protocol: Protocol,
    pub initiator: Endpoint,
    pub responder: Endpoint,
    pub start_time: Timestamp,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelManifest {
    pub entries: Vec<LabelEntry>,
}

type FlowIdentity = (Protocol, Endpoint, Endpoint, Timestamp);

impl LabelManifest {
    const HEADER: [&'static str; 7] = [
        "protocol",
        "src_ip",
        "src_port",
        "dst_ip",
        "dst_port",
        "start_time",
        "label",
    ];

    /// Index for label lookups by flow identity.
    pub fn index(&self) -> LabelIndex<'_> {
        LabelIndex {
            map: self
                .entries
                .iter()
                .map(|e| ((e.protocol, e.initiator, e.responder, e.start_time), e.label.as_str()))
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fmt_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(Self::HEADER).map_err(fmt_err)?;
        for e in &self.entries {
            w.write_record([
                e.protocol.to_string(),
                e.initiator.ip.to_string(),
                e.initiator.port.to_string(),
                e.responder.ip.to_string(),
                e.responder.port.to_string(),
                e.start_time.to_string(),
                e.label.clone(),
            ])
            .map_err(fmt_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != Self::HEADER {
            return Err(Error::Schema(format!(
                "{}: label manifest header must be {}",
                path.display(),
                Self::HEADER.join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            let bad = || Error::Schema(format!("{}: line {} is malformed", path.display(), i + 2));
            let ip = |k: usize| rec.get(k).and_then(|s| s.parse::<Ipv4Addr>().ok()).ok_or_else(bad);
            let port = |k: usize| rec.get(k).and_then(|s| s.parse::<u16>().ok()).ok_or_else(bad);
            entries.push(LabelEntry {
                protocol: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                initiator: Endpoint::new(ip(1)?, port(2)?),
                responder: Endpoint::new(ip(3)?, port(4)?),
                start_time: rec.get(5).and_then(parse_timestamp).ok_or_else(bad)?,
                label: rec.get(6).filter(|s| !s.is_empty()).ok_or_else(bad)?.to_string(),
            });
        }
        Ok(LabelManifest { entries })
    }
}

pub struct LabelIndex<'a> {
    map: HashMap<FlowIdentity, &'a str>,
}

impl LabelIndex<'_> {
    pub fn label_for(&self, flow: &BiFlow) -> Option<&str> {
        self.map
            .get(&(flow.key.protocol, flow.initiator, flow.responder(), flow.start_time))
            .copied()
    }
}

/// Packets in timestamp order plus the label of every flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub packets: Vec<PacketRecord>,
    pub labels: LabelManifest,
}

fn server_ip(i: u32) -> Ipv4Addr {
    Ipv4Addr::new(192, 168, 0, (i + 1) as u8)
}

fn source_ip(class: usize, i: u32) -> Ipv4Addr {
    Ipv4Addr::new(10, (class + 1) as u8, (i / 250) as u8, (i % 250 + 1) as u8)
}

/// Micro-second grid keeps timestamps exact through a pcap round trip.
fn micros(secs: f64) -> u64 {
    (secs * 1e6).round() as u64
}

struct FlowPlan {
    start_us: u64,
    client: Endpoint,
    server: Endpoint,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base_us = spec.start_s * 1_000_000;
    let span_us = micros(spec.duration_s).max(1);

    let mut packets = Vec::new();
    let mut entries = Vec::new();
    for (ci, class) in spec.classes.iter().enumerate() {
        let servers: Vec<Ipv4Addr> = {
            let mut picked = BTreeSet::new();
            while picked.len() < class.targets as usize {
                picked.insert(rng.random_range(0..spec.servers));
            }
            picked.into_iter().map(server_ip).collect()
        };
        for s in 0..class.sources {
            let client_ip = source_ip(ci, s);
            let n = class.flows_per_source.sample(&mut rng) as usize;
            let mut starts: Vec<u64> = (0..n).map(|_| base_us + rng.random_range(0..span_us)).collect();
            starts.sort_unstable();
            let ports = source_ports(class.src_ports, n, &mut rng);
            let target = servers[rng.random_range(0..servers.len())];
            for (f, (&start_us, &src_port)) in starts.iter().zip(&ports).enumerate() {
                let (server, dst_port) = match &class.dst_ports {
                    DstPorts::Choice { ports } => (
                        servers[rng.random_range(0..servers.len())],
                        ports[rng.random_range(0..ports.len())],
                    ),
                    DstPorts::Sweep { first } => (target, first + f as u16),
                };
                let plan = FlowPlan {
                    start_us,
                    client: Endpoint::new(client_ip, src_port),
                    server: Endpoint::new(server, dst_port),
                };
                emit_flow(class, &plan, &mut rng, &mut packets);
                entries.push(LabelEntry {
                    protocol: Protocol::Tcp,
                    initiator: plan.client,
                    responder: plan.server,
                    start_time: Timestamp::from_micros(start_us),
                    label: class.label.clone(),
                });
            }
        }
    }
    packets.sort_by_key(|p| p.timestamp);
    entries.sort_by(|a, b| a.start_time.cmp(&b.start_time).then(a.initiator.cmp(&b.initiator)));
    Ok(Scenario {
        packets,
        labels: LabelManifest { entries },
    })
}

fn source_ports(pattern: PortPattern, n: usize, rng: &mut ChaCha8Rng) -> Vec<u16> {
    match pattern {
        PortPattern::EphemeralRandom => {
            let mut used = BTreeSet::new();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let p = rng.random_range(EPHEMERAL_LOW..=EPHEMERAL_HIGH);
                if used.insert(p) {
                    out.push(p);
                }
            }
            out
        }
        PortPattern::Sequential { step } => {
            let span = u32::from(step) * (n.saturating_sub(1) as u32);
            let first = rng.random_range(u32::from(EPHEMERAL_LOW)..=u32::from(EPHEMERAL_HIGH) - span);
            (0..n as u32).map(|i| (first + i * u32::from(step)) as u16).collect()
        }
        PortPattern::Fixed { port } => vec![port; n],
    }
}

fn packet_size(dist: &Dist, rng: &mut ChaCha8Rng) -> u16 {
    dist.sample(rng)
        .round()
        .clamp(f64::from(Protocol::Tcp.min_ip_total_length()), MAX_PACKET) as u16
}

fn emit_flow(class: &ClassSpec, plan: &FlowPlan, rng: &mut ChaCha8Rng, out: &mut Vec<PacketRecord>) {
    // gaps stay well below the default idle timeout so a flow never splits
    let max_gap_us = 60_000_000u64;
    let mut t = plan.start_us;
    let next_gap = |rng: &mut ChaCha8Rng| micros(class.iat.sample(rng)).clamp(1, max_gap_us);
    let mut push = |t: u64, forward: bool, len: u16, flags: TcpFlags| {
        let (src, dst) = if forward {
            (plan.client, plan.server)
        } else {
            (plan.server, plan.client)
        };
        out.push(PacketRecord {
            timestamp: Timestamp::from_micros(t),
            src_ip: src.ip,
            dst_ip: dst.ip,
            src_port: src.port,
            dst_port: dst.port,
            protocol: Protocol::Tcp,
            ip_total_length: len,
            tcp_flags: flags,
        });
    };

    match class.shape {
        FlowShape::Probe => {
            push(t, true, packet_size(&class.fwd_size, rng), TcpFlags::SYN);
            t += next_gap(rng);
            push(
                t,
                false,
                packet_size(&class.bwd_size, rng),
                TcpFlags::RST | TcpFlags::ACK,
            );
        }
        FlowShape::Session => {
            push(t, true, 60, TcpFlags::SYN);
            t += next_gap(rng);
            push(t, false, 60, TcpFlags::SYN | TcpFlags::ACK);
            t += next_gap(rng);
            push(t, true, 52, TcpFlags::ACK);
            for _ in 0..class.data_packets.sample(rng) {
                t += next_gap(rng);
                let forward = rng.random_bool(0.5);
                let size = packet_size(if forward { &class.fwd_size } else { &class.bwd_size }, rng);
                push(t, forward, size, TcpFlags::PSH | TcpFlags::ACK);
            }
            t += next_gap(rng);
            push(t, true, 52, TcpFlags::FIN | TcpFlags::ACK);
            t += next_gap(rng);
            push(t, false, 52, TcpFlags::FIN | TcpFlags::ACK);
        }
    }
}

/// The bundling example with hosts A-D: A opens four flows, B two, C and D one each.
pub fn fig2_replay() -> Scenario {
    let host = |c: char| Ipv4Addr::new(10, 0, 0, c as u8 - b'A' + 1);
    let flows = [
        ('A', 'B', 40001),
        ('A', 'B', 40002),
        ('B', 'C', 50001),
        ('A', 'C', 40003),
        ('D', 'B', 45001),
        ('B', 'C', 50002),
        ('A', 'D', 40004),
        ('C', 'A', 47001),
    ];
    let class = benign_like("benign", 1, Range::exactly(1), 1, PortPattern::EphemeralRandom);
    let class = ClassSpec {
        data_packets: Range::exactly(2),
        fwd_size: Dist::Constant { value: 200.0 },
        bwd_size: Dist::Constant { value: 600.0 },
        iat: Dist::Constant { value: 0.5 },
        ..class
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut packets = Vec::new();
    let mut entries = Vec::new();
    for (i, &(src, dst, port)) in flows.iter().enumerate() {
        let plan = FlowPlan {
            start_us: 1_000_000 * (10 + 2 * i as u64),
            client: Endpoint::new(host(src), port),
            server: Endpoint::new(host(dst), 80),
        };
        emit_flow(&class, &plan, &mut rng, &mut packets);
        entries.push(LabelEntry {
            protocol: Protocol::Tcp,
            initiator: plan.client,
            responder: plan.server,
            start_time: Timestamp::from_micros(plan.start_us),
            label: format!("{src}{dst}"),
        });
    }
    packets.sort_by_key(|p| p.timestamp);
    Scenario {
        packets,
        labels: LabelManifest { entries },
    }
}

fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = bytes
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)])))
        .sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

/// Serialises packets as a classic Ethernet pcap image.
///
/// Microsecond resolution is used unless some timestamp needs nanoseconds.
pub fn encode_pcap(packets: &[PacketRecord]) -> Result<Vec<u8>> {
    if let Some(w) = packets.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Domain(format!(
            "packet {} is earlier than its predecessor",
            w + 1
        )));
    }
    let nanos = packets.iter().any(|p| p.timestamp.as_nanos() % 1_000 != 0);
    let mut buf = Vec::with_capacity(24 + packets.len() * 128);
    buf.extend_from_slice(&(if nanos { MAGIC_NANOS } else { MAGIC_MICROS }).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&4u16.to_le_bytes());
    buf.extend_from_slice(&0i32.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&65535u32.to_le_bytes());
    buf.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());

    for (i, p) in packets.iter().enumerate() {
        if p.ip_total_length < p.protocol.min_ip_total_length() {
            return Err(Error::Domain(format!(
                "packet {i}: total length {} is below the {} header minimum",
                p.ip_total_length, p.protocol
            )));
        }
        if p.protocol == Protocol::Udp && !p.tcp_flags.is_empty() {
            return Err(Error::Domain(format!("packet {i}: UDP packets cannot carry TCP flags")));
        }
        let total = usize::from(p.ip_total_length);
        let mut frame = Vec::with_capacity(14 + total);
        frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01, 0x08, 0x00]);
        let mut ip = [0u8; 20];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&p.ip_total_length.to_be_bytes());
        ip[4..6].copy_from_slice(&(i as u16).to_be_bytes());
        ip[6] = 0x40;
        ip[8] = 64;
        ip[9] = p.protocol.ip_number();
        ip[12..16].copy_from_slice(&p.src_ip.octets());
        ip[16..20].copy_from_slice(&p.dst_ip.octets());
        let checksum = ones_complement_sum(&ip);
        ip[10..12].copy_from_slice(&checksum.to_be_bytes());
        frame.extend_from_slice(&ip);
        match p.protocol {
            Protocol::Tcp => {
                let mut tcp = [0u8; 20];
                tcp[0..2].copy_from_slice(&p.src_port.to_be_bytes());
                tcp[2..4].copy_from_slice(&p.dst_port.to_be_bytes());
                tcp[12] = 0x50;
                tcp[13] = p.tcp_flags.bits();
                tcp[14..16].copy_from_slice(&65535u16.to_be_bytes());
                frame.extend_from_slice(&tcp);
            }
            Protocol::Udp => {
                let mut udp = [0u8; 8];
                udp[0..2].copy_from_slice(&p.src_port.to_be_bytes());
                udp[2..4].copy_from_slice(&p.dst_port.to_be_bytes());
                udp[4..6].copy_from_slice(&(p.ip_total_length - 20).to_be_bytes());
                frame.extend_from_slice(&udp);
            }
        }
        frame.resize(14 + total, 0);

        let (secs, frac) = if nanos {
            p.timestamp.split_nanos()
        } else {
            p.timestamp.split_micros()
        };
        let secs = u32::try_from(secs).map_err(|_| Error::Domain(format!("packet {i}: timestamp beyond 2106")))?;
        buf.extend_from_slice(&secs.to_le_bytes());
        buf.extend_from_slice(&frac.to_le_bytes());
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        buf.extend_from_slice(&frame);
    }
    Ok(buf)
}

pub fn write_pcap(packets: &[PacketRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pcap(packets)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::parse_pcap;

    #[test]
    fn empty_capture_is_header_only() {
        let bytes = encode_pcap(&[]).unwrap();
        assert_eq!(bytes.len(), 24);
        assert!(parse_pcap(&bytes).unwrap().packets.is_empty());
    }

    #[test]
    fn ip_checksum_verifies() {
        let s = fig2_replay();
        let bytes = encode_pcap(&s.packets[..1]).unwrap();
        let ip = &bytes[24 + 16 + 14..24 + 16 + 34];
        assert_eq!(ones_complement_sum(ip), 0);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let s = fig2_replay();
        let mut pk = s.packets[..2].to_vec();
        pk.reverse();
        assert!(encode_pcap(&pk).is_err());
    }

    #[test]
    fn nanosecond_timestamps_switch_magic() {
        let mut p = fig2_replay().packets[0];
        p.timestamp = Timestamp::from_nanos(5_000_000_123);
        let bytes = encode_pcap(&[p]).unwrap();
        assert_eq!(&bytes[..4], &MAGIC_NANOS.to_le_bytes());
        assert_eq!(parse_pcap(&bytes).unwrap().packets, vec![p]);
    }

    #[test]
    fn single_benign_flow_scenario() {
        let spec = ScenarioSpec {
            seed: 1,
            duration_s: 10.0,
            start_s: 0,
            servers: 1,
            classes: vec![benign_like(
                "benign",
                1,
                Range::exactly(1),
                1,
                PortPattern::EphemeralRandom,
            )],
        };
        let s = generate(&spec).unwrap();
        assert_eq!(s.labels.entries.len(), 1);
        assert_eq!(s.labels.entries[0].label, "benign");
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let mut spec = ScenarioSpec::mimicking(1);
        spec.classes[0].sources = 0;
        assert!(generate(&spec).is_err());
        let mut spec = ScenarioSpec::mimicking(1);
        spec.classes.clear();
        assert!(generate(&spec).is_err());
        let mut spec = ScenarioSpec::mimicking(1);
        spec.classes[1].src_ports = PortPattern::Sequential { step: 5000 };
        assert!(generate(&spec).is_err());
        let mut spec = ScenarioSpec::mimicking(1);
        spec.classes[1].iat = Dist::Exponential { mean: 0.0 };
        assert!(generate(&spec).is_err());
        assert!(ScenarioSpec::preset("nope", 1).is_err());
    }

    #[test]
    fn sequential_ports_are_evenly_spaced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ports = source_ports(PortPattern::Sequential { step: 3 }, 40, &mut rng);
        assert!(ports.windows(2).all(|w| w[1] - w[0] == 3));
        assert!(ports[0] >= EPHEMERAL_LOW && *ports.last().unwrap() <= EPHEMERAL_HIGH);
    }

    #[test]
    fn manifest_csv_round_trip() {
        let s = fig2_replay();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        s.labels.write_csv_file(&path).unwrap();
        assert_eq!(LabelManifest::read_csv_file(&path).unwrap(), s.labels);
    }
}
