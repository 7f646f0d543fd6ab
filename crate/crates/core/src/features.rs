//! Per-flow statistical features and the flow CSV format.
//!
//! Each direction of a flow contributes 17 statistics, giving 34 flow-level
//! features. Two more slots, `num_flows` and `src_ports_delta`, stay empty
//! until [`crate::aggregation::propagate`] fills them from the flow's bundle.
//!
//! Conventions:
//! - packet size is the IPv4 Total Length;
//! - standard deviations divide by `n`;
//! - a direction with no packets reports zero for every statistic, and one
//!   with a single packet reports zero for its inter-arrival statistics;
//! - `time_from_first_mean` averages `t_i - t_0` over a direction's packets
//!   after its first one, anchored at that direction's own first packet.

use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::BiFlow;
use crate::packet::{Endpoint, PacketRecord, Protocol, TcpFlags, Timestamp};

pub const DIRECTION_FEATURES: usize = 17;
pub const FLOW_FEATURES: usize = 2 * DIRECTION_FEATURES;

/// Names of the 34 flow-level features in CSV column order.
pub const FLOW_FEATURE_NAMES: [&str; FLOW_FEATURES] = [
    "fwd_pkt_count",
    "fwd_byte_count",
    "fwd_pkt_len_mean",
    "fwd_pkt_len_std",
    "fwd_pkt_len_min",
    "fwd_pkt_len_max",
    "fwd_iat_mean",
    "fwd_iat_std",
    "fwd_iat_min",
    "fwd_iat_max",
    "fwd_time_from_first_mean",
    "fwd_flag_syn_count",
    "fwd_flag_ack_count",
    "fwd_flag_fin_count",
    "fwd_flag_rst_count",
    "fwd_flag_psh_count",
    "fwd_flag_urg_count",
    "bwd_pkt_count",
    "bwd_byte_count",
    "bwd_pkt_len_mean",
    "bwd_pkt_len_std",
    "bwd_pkt_len_min",
    "bwd_pkt_len_max",
    "bwd_iat_mean",
    "bwd_iat_std",
    "bwd_iat_min",
    "bwd_iat_max",
    "bwd_time_from_first_mean",
    "bwd_flag_syn_count",
    "bwd_flag_ack_count",
    "bwd_flag_fin_count",
    "bwd_flag_rst_count",
    "bwd_flag_psh_count",
    "bwd_flag_urg_count",
];

pub const NUM_FLOWS: &str = "num_flows";
pub const SRC_PORTS_DELTA: &str = "src_ports_delta";
pub const AGGREGATION_FEATURE_NAMES: [&str; 2] = [NUM_FLOWS, SRC_PORTS_DELTA];

/// Identity columns written ahead of the feature columns in flow CSVs.
pub const METADATA_COLUMNS: [&str; 6] = ["src_ip", "src_port", "dst_ip", "dst_port", "protocol", "start_time"];
pub const LABEL_COLUMN: &str = "label";
pub const DEFAULT_LABEL: &str = "benign";

/// Feature names of the full 36-column matrix (flow features, then aggregation features).
pub fn all_feature_names() -> Vec<String> {
    FLOW_FEATURE_NAMES
        .iter()
        .chain(AGGREGATION_FEATURE_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

pub fn is_aggregation_feature(name: &str) -> bool {
    AGGREGATION_FEATURE_NAMES.contains(&name)
}

/// Whether a feature holds a count (written without decimals).
fn is_count_feature(name: &str) -> bool {
    name.ends_with("_count") || name == NUM_FLOWS
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    pub pkt_count: u64,
    pub byte_count: u64,
    pub pkt_len_mean: f64,
    pub pkt_len_std: f64,
    pub pkt_len_min: f64,
    pub pkt_len_max: f64,
    pub iat_mean: f64,
    pub iat_std: f64,
    pub iat_min: f64,
    pub iat_max: f64,
    pub time_from_first_mean: f64,
    pub flag_syn_count: u64,
    pub flag_ack_count: u64,
    pub flag_fin_count: u64,
    pub flag_rst_count: u64,
    pub flag_psh_count: u64,
    pub flag_urg_count: u64,
}

impl DirectionStats {
    pub fn from_packets(packets: &[PacketRecord]) -> Self {
        if packets.is_empty() {
            return DirectionStats::default();
        }
        let lengths: Vec<f64> = packets.iter().map(|p| f64::from(p.ip_total_length)).collect();
        let (len_mean, len_std) = mean_std(&lengths);

        let mut times: Vec<Timestamp> = packets.iter().map(|p| p.timestamp).collect();
        times.sort_unstable();
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1].secs_since(w[0])).collect();
        let (iat_mean, iat_std) = mean_std(&gaps);
        let since_first: Vec<f64> = times[1..].iter().map(|t| t.secs_since(times[0])).collect();
        let (time_from_first_mean, _) = mean_std(&since_first);

        let count_flag = |flag: TcpFlags| packets.iter().filter(|p| p.tcp_flags.contains(flag)).count() as u64;

        DirectionStats {
            pkt_count: packets.len() as u64,
            byte_count: packets.iter().map(|p| u64::from(p.ip_total_length)).sum(),
            pkt_len_mean: len_mean,
            pkt_len_std: len_std,
            pkt_len_min: lengths.iter().copied().fold(f64::INFINITY, f64::min),
            pkt_len_max: lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            iat_mean,
            iat_std,
            iat_min: gaps.iter().copied().reduce(f64::min).unwrap_or(0.0),
            iat_max: gaps.iter().copied().reduce(f64::max).unwrap_or(0.0),
            time_from_first_mean,
            flag_syn_count: count_flag(TcpFlags::SYN),
            flag_ack_count: count_flag(TcpFlags::ACK),
            flag_fin_count: count_flag(TcpFlags::FIN),
            flag_rst_count: count_flag(TcpFlags::RST),
            flag_psh_count: count_flag(TcpFlags::PSH),
            flag_urg_count: count_flag(TcpFlags::URG),
        }
    }

    pub fn values(&self) -> [f64; DIRECTION_FEATURES] {
        [
            self.pkt_count as f64,
            self.byte_count as f64,
            self.pkt_len_mean,
            self.pkt_len_std,
            self.pkt_len_min,
            self.pkt_len_max,
            self.iat_mean,
            self.iat_std,
            self.iat_min,
            self.iat_max,
            self.time_from_first_mean,
            self.flag_syn_count as f64,
            self.flag_ack_count as f64,
            self.flag_fin_count as f64,
            self.flag_rst_count as f64,
            self.flag_psh_count as f64,
            self.flag_urg_count as f64,
        ]
    }

    fn from_values(v: &[f64]) -> Self {
        let count = |x: f64| x.round().max(0.0) as u64;
        DirectionStats {
            pkt_count: count(v[0]),
            byte_count: count(v[1]),
            pkt_len_mean: v[2],
            pkt_len_std: v[3],
            pkt_len_min: v[4],
            pkt_len_max: v[5],
            iat_mean: v[6],
            iat_std: v[7],
            iat_min: v[8],
            iat_max: v[9],
            time_from_first_mean: v[10],
            flag_syn_count: count(v[11]),
            flag_ack_count: count(v[12]),
            flag_fin_count: count(v[13]),
            flag_rst_count: count(v[14]),
            flag_psh_count: count(v[15]),
            flag_urg_count: count(v[16]),
        }
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Identity of the flow a feature row describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMeta {
    pub initiator: Endpoint,
    pub responder: Endpoint,
    pub protocol: Protocol,
    pub start_time: Timestamp,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFeatureVector {
    pub meta: FlowMeta,
    pub fwd: DirectionStats,
    pub bwd: DirectionStats,
    pub num_flows: Option<u64>,
    pub src_ports_delta: Option<f64>,
}

impl FlowFeatureVector {
    /// The 34 flow-level features in [`FLOW_FEATURE_NAMES`] order.
    pub fn flow_values(&self) -> [f64; FLOW_FEATURES] {
        let mut out = [0.0; FLOW_FEATURES];
        out[..DIRECTION_FEATURES].copy_from_slice(&self.fwd.values());
        out[DIRECTION_FEATURES..].copy_from_slice(&self.bwd.values());
        out
    }

    /// All 36 features; unfilled aggregation slots read as `None`.
    pub fn values(&self) -> Vec<Option<f64>> {
        self.flow_values()
            .into_iter()
            .map(Some)
            .chain([self.num_flows.map(|n| n as f64), self.src_ports_delta])
            .collect()
    }

    pub fn is_aggregated(&self) -> bool {
        self.num_flows.is_some() && self.src_ports_delta.is_some()
    }
}

/// Computes the 34 flow statistics; aggregation slots are left empty.
pub fn extract_features(flow: &BiFlow, label: &str) -> FlowFeatureVector {
    FlowFeatureVector {
        meta: FlowMeta {
            initiator: flow.initiator,
            responder: flow.responder(),
            protocol: flow.key.protocol,
            start_time: flow.start_time,
            label: label.to_string(),
        },
        fwd: DirectionStats::from_packets(&flow.fwd_packets),
        bwd: DirectionStats::from_packets(&flow.bwd_packets),
        num_flows: None,
        src_ports_delta: None,
    }
}

fn format_value(name: &str, value: Option<f64>) -> String {
    match value {
        None => String::new(),
        Some(v) if is_count_feature(name) => format!("{}", v.round() as i64),
        Some(v) => format!("{v:.6}"),
    }
}

/// Full header row of a flow CSV.
pub fn csv_header() -> Vec<String> {
    METADATA_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(all_feature_names())
        .chain([LABEL_COLUMN.to_string()])
        .collect()
}

pub fn write_csv<W: Write>(rows: &[FlowFeatureVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let names = all_feature_names();
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(csv_header()).map_err(fmt_err)?;
    for row in rows {
        let mut record = vec![
            row.meta.initiator.ip.to_string(),
            row.meta.initiator.port.to_string(),
            row.meta.responder.ip.to_string(),
            row.meta.responder.port.to_string(),
            row.meta.protocol.to_string(),
            row.meta.start_time.to_string(),
        ];
        record.extend(names.iter().zip(row.values()).map(|(n, v)| format_value(n, v)));
        record.push(row.meta.label.clone());
        w.write_record(&record).map_err(fmt_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn write_csv_file(rows: &[FlowFeatureVector], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, std::io::BufWriter::new(file))
}

/// Parses `secs.fraction` without going through floating point.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: u64 = whole.parse().ok()?;
    let frac_nanos: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<9}").parse().ok()?
    };
    Some(Timestamp::from_nanos(
        secs.checked_mul(1_000_000_000)?.checked_add(frac_nanos)?,
    ))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<FlowFeatureVector>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected = csv_header();
    if header != expected {
        let missing: Vec<&String> = expected.iter().filter(|c| !header.contains(c)).collect();
        return Err(Error::Schema(if missing.is_empty() {
            "flow CSV columns are out of order".to_string()
        } else {
            format!("flow CSV lacks columns {missing:?}")
        }));
    }

    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let bad = |col: &str, v: &str| Error::Schema(format!("line {line}: invalid {col} `{v}`"));
        let ip = |idx: usize| {
            field(idx)
                .parse::<Ipv4Addr>()
                .map_err(|_| bad(&header[idx], field(idx)))
        };
        let port = |idx: usize| field(idx).parse::<u16>().map_err(|_| bad(&header[idx], field(idx)));

        let meta = FlowMeta {
            initiator: Endpoint::new(ip(0)?, port(1)?),
            responder: Endpoint::new(ip(2)?, port(3)?),
            protocol: field(4).parse().map_err(|_| bad("protocol", field(4)))?,
            start_time: parse_timestamp(field(5)).ok_or_else(|| bad("start_time", field(5)))?,
            label: field(METADATA_COLUMNS.len() + FLOW_FEATURES + 2).to_string(),
        };
        let mut values = [0.0; FLOW_FEATURES];
        for (j, v) in values.iter_mut().enumerate() {
            let idx = METADATA_COLUMNS.len() + j;
            *v = field(idx)
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(&header[idx], field(idx)))?;
        }
        let agg = |idx: usize| -> Result<Option<f64>> {
            let s = field(idx);
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .map(Some)
                    .ok_or_else(|| bad(&header[idx], s))
            }
        };
        let base = METADATA_COLUMNS.len() + FLOW_FEATURES;
        rows.push(FlowFeatureVector {
            meta,
            fwd: DirectionStats::from_values(&values[..DIRECTION_FEATURES]),
            bwd: DirectionStats::from_values(&values[DIRECTION_FEATURES..]),
            num_flows: agg(base)?.map(|n| n.round() as u64),
            src_ports_delta: agg(base + 1)?,
        });
    }
    Ok(rows)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Vec<FlowFeatureVector>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}
