//! Flow aggregation: the bundle level above bidirectional flows.
//!
//! Flows are grouped into bundles by the IP address that initiated them
//! (optionally within tumbling time windows). Each bundle yields two
//! features that are copied back onto every member flow:
//!
//! * `num_flows`, the number of flows in the bundle;
//! * `src_ports_delta`, the mean absolute gap between consecutive initiator
//!   ports once those ports are sorted.
//!
//! A host that opens many connections with sequentially allocated source
//! ports, as slow-rate DoS tools do, gets a large flow count and a tiny port
//! delta, even when each individual flow looks benign.
//!
//! ```
//! use flowbundle::aggregation::ports_delta;
//!
//! assert_eq!(ports_delta(&[4000, 1000, 2000]).unwrap(), 1500.0);
//! assert_eq!(ports_delta(&[5555]).unwrap(), 0.0);
//! ```

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FlowFeatureVector;
use crate::flow::BiFlow;
use crate::packet::Timestamp;

/// How far apart in time two flows may start and still share a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// One bundle per initiator over the whole capture.
    #[default]
    Unbounded,
    /// Tumbling windows of the given length in seconds.
    Tumbling(f64),
}

impl Window {
    pub fn tumbling(seconds: f64) -> Result<Self> {
        if seconds > 0.0 && seconds.is_finite() {
            Ok(Window::Tumbling(seconds))
        } else {
            Err(Error::Config(format!(
                "aggregation window must be a positive number of seconds, got {seconds}"
            )))
        }
    }

    pub fn index_of(&self, start: Timestamp) -> u64 {
        match *self {
            Window::Unbounded => 0,
            Window::Tumbling(len) => (start.as_secs_f64() / len).floor() as u64,
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "unbounded" => Ok(Window::Unbounded),
            other => {
                let secs: f64 = other
                    .parse()
                    .map_err(|_| Error::Config(format!("window must be seconds or `none`, got `{s}`")))?;
                Window::tumbling(secs)
            }
        }
    }
}

/// What bundling needs to know about a flow.
pub trait FlowOrigin {
    fn initiator_ip(&self) -> Ipv4Addr;
    fn initiator_port(&self) -> u16;
    fn start_time(&self) -> Timestamp;
}

impl FlowOrigin for BiFlow {
    fn initiator_ip(&self) -> Ipv4Addr {
        self.initiator.ip
    }
    fn initiator_port(&self) -> u16 {
        self.initiator.port
    }
    fn start_time(&self) -> Timestamp {
        self.start_time
    }
}

impl FlowOrigin for FlowFeatureVector {
    fn initiator_ip(&self) -> Ipv4Addr {
        self.meta.initiator.ip
    }
    fn initiator_port(&self) -> u16 {
        self.meta.initiator.port
    }
    fn start_time(&self) -> Timestamp {
        self.meta.start_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub initiator_ip: Ipv4Addr,
    pub window_index: u64,
    /// Indices into the flow list the bundle was built from.
    pub member_flows: Vec<usize>,
    pub num_flows: u64,
    pub src_ports_delta: f64,
}

/// Mean absolute difference between consecutive sorted ports.
///
/// Duplicates are kept. A single port yields 0.
pub fn ports_delta(ports: &[u16]) -> Result<f64> {
    if ports.is_empty() {
        return Err(Error::Domain("ports_delta needs at least one port".into()));
    }
    let mut sorted = ports.to_vec();
    sorted.sort_unstable();
    if sorted.len() == 1 {
        return Ok(0.0);
    }
    let total: u64 = sorted.windows(2).map(|w| u64::from(w[1].abs_diff(w[0]))).sum();
    Ok(total as f64 / (sorted.len() - 1) as f64)
}

/// Groups flows by `(initiator IP, window index)`.
///
/// Bundles come back ordered by window index, then initiator address; member
/// indices keep the input order.
pub fn bundle_flows<F: FlowOrigin>(flows: &[F], window: Window) -> Result<Vec<Bundle>> {
    if let Window::Tumbling(len) = window {
        Window::tumbling(len)?;
    }
    let mut groups: BTreeMap<(u64, Ipv4Addr), Vec<usize>> = BTreeMap::new();
    for (i, flow) in flows.iter().enumerate() {
        groups
            .entry((window.index_of(flow.start_time()), flow.initiator_ip()))
            .or_default()
            .push(i);
    }
    groups
        .into_iter()
        .map(|((window_index, initiator_ip), members)| {
            let ports: Vec<u16> = members.iter().map(|&i| flows[i].initiator_port()).collect();
            Ok(Bundle {
                initiator_ip,
                window_index,
                num_flows: members.len() as u64,
                src_ports_delta: ports_delta(&ports)?,
                member_flows: members,
            })
        })
        .collect()
}

/// Copies each bundle's features onto its member rows.
///
/// `features` must be indexed the same way as the flows the bundles were built
/// from. Every row must belong to exactly one bundle.
pub fn propagate(bundles: &[Bundle], mut features: Vec<FlowFeatureVector>) -> Result<Vec<FlowFeatureVector>> {
    let mut seen = vec![false; features.len()];
    for bundle in bundles {
        for &i in &bundle.member_flows {
            let row = features.get_mut(i).ok_or_else(|| {
                Error::Consistency(format!(
                    "bundle for {} references flow {i}, but only {} rows exist",
                    bundle.initiator_ip,
                    seen.len()
                ))
            })?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Consistency(format!("flow {i} belongs to more than one bundle")));
            }
            if row.meta.initiator.ip != bundle.initiator_ip {
                return Err(Error::Consistency(format!(
                    "flow {i} was initiated by {}, not by bundle owner {}",
                    row.meta.initiator.ip, bundle.initiator_ip
                )));
            }
            row.num_flows = Some(bundle.num_flows);
            row.src_ports_delta = Some(bundle.src_ports_delta);
        }
    }
    if let Some(orphan) = seen.iter().position(|s| !s) {
        return Err(Error::Consistency(format!(
            "flow {orphan} is not a member of any bundle"
        )));
    }
    Ok(features)
}

/// Bundles feature rows directly and fills their aggregation slots.
pub fn aggregate(features: Vec<FlowFeatureVector>, window: Window) -> Result<Vec<FlowFeatureVector>> {
    let bundles = bundle_flows(&features, window)?;
    propagate(&bundles, features)
}
