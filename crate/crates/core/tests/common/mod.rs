//! Independent oracles and generators shared by the integration tests.
//!
//! Everything here is written the slow, obvious way so it can be trusted as a
//! reference for the optimised library code.
#![allow(dead_code)]

use std::net::Ipv4Addr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use flowbundle::aggregation::{self, Window};
use flowbundle::features::FlowFeatureVector;
use flowbundle::flow::{BiFlow, FlowKey, FlowTimeouts};
use flowbundle::nn::{loss_and_gradients, Activation, Loss, MlpModel, OutputActivation};
use flowbundle::packet::{Endpoint, PacketRecord, Protocol, TcpFlags, Timestamp};
use flowbundle::pipeline;
use flowbundle::synth::{self, ScenarioSpec};

/// Sort with insertion sort, then average the absolute neighbour differences.
pub fn oracle_ports_delta(ports: &[u16]) -> f64 {
    let mut sorted: Vec<i64> = Vec::new();
    for &p in ports {
        let p = i64::from(p);
        let mut at = sorted.len();
        while at > 0 && sorted[at - 1] > p {
            at -= 1;
        }
        sorted.insert(at, p);
    }
    if sorted.len() < 2 {
        return 0.0;
    }
    let mut total: i64 = 0;
    for i in 1..sorted.len() {
        total += (sorted[i] - sorted[i - 1]).abs();
    }
    total as f64 / (sorted.len() - 1) as f64
}

fn oracle_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s / xs.len() as f64
    }
}

fn oracle_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = oracle_mean(xs);
    let mut s = 0.0;
    for x in xs {
        s += (x - m) * (x - m);
    }
    (s / xs.len() as f64).sqrt()
}

/// The 17 statistics of one direction, computed from scratch.
pub fn oracle_direction(packets: &[PacketRecord]) -> Vec<f64> {
    if packets.is_empty() {
        return vec![0.0; 17];
    }
    let sizes: Vec<f64> = packets.iter().map(|p| p.ip_total_length as f64).collect();
    let mut nanos: Vec<u64> = packets.iter().map(|p| p.timestamp.as_nanos()).collect();
    nanos.sort();
    let secs = |n: u64| n as f64 / 1e9;
    let mut gaps = Vec::new();
    for i in 1..nanos.len() {
        gaps.push(secs(nanos[i] - nanos[i - 1]));
    }
    let mut since_first = Vec::new();
    for &n in &nanos[1..] {
        since_first.push(secs(n - nanos[0]));
    }
    let mut min_size = f64::MAX;
    let mut max_size = f64::MIN;
    for &s in &sizes {
        min_size = min_size.min(s);
        max_size = max_size.max(s);
    }
    let (mut gmin, mut gmax) = (0.0, 0.0);
    if !gaps.is_empty() {
        gmin = f64::MAX;
        gmax = f64::MIN;
        for &g in &gaps {
            gmin = gmin.min(g);
            gmax = gmax.max(g);
        }
    }
    let flag = |f: TcpFlags| packets.iter().filter(|p| p.tcp_flags.bits() & f.bits() != 0).count() as f64;
    let mut bytes = 0.0;
    for s in &sizes {
        bytes += s;
    }
    vec![
        packets.len() as f64,
        bytes,
        oracle_mean(&sizes),
        oracle_std(&sizes),
        min_size,
        max_size,
        oracle_mean(&gaps),
        oracle_std(&gaps),
        gmin,
        gmax,
        oracle_mean(&since_first),
        flag(TcpFlags::SYN),
        flag(TcpFlags::ACK),
        flag(TcpFlags::FIN),
        flag(TcpFlags::RST),
        flag(TcpFlags::PSH),
        flag(TcpFlags::URG),
    ]
}

/// All 34 flow features: forward block, then backward block.
pub fn oracle_flow_features(flow: &BiFlow) -> Vec<f64> {
    let mut v = oracle_direction(&flow.fwd_packets);
    v.extend(oracle_direction(&flow.bwd_packets));
    v
}

/// `|a - b|` relative to the larger magnitude, with an absolute floor for values near zero.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-12 || diff <= rel * a.abs().max(b.abs())
}

/// A flow of up to `max_packets` packets between two fixed hosts, built directly
/// (not through flow assembly) so features can be checked in isolation.
pub fn random_flow(rng: &mut ChaCha8Rng, max_packets: usize) -> BiFlow {
    let protocol = if rng.random_bool(0.8) {
        Protocol::Tcp
    } else {
        Protocol::Udp
    };
    let client = Endpoint::new(
        Ipv4Addr::new(10, 0, 0, rng.random_range(1..250)),
        rng.random_range(1024..65535),
    );
    let server = Endpoint::new(
        Ipv4Addr::new(192, 168, 1, rng.random_range(1..250)),
        rng.random_range(1..1024),
    );
    let n = rng.random_range(1..=max_packets);
    let start = rng.random_range(1_000_000_000u64..2_000_000_000) * 1_000_000_000;
    let mut t = start;
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for i in 0..n {
        if i > 0 {
            t += match rng.random_range(0..4) {
                0 => 0,
                1 => rng.random_range(1..1_000),
                2 => rng.random_range(1_000..10_000_000),
                _ => rng.random_range(10_000_000..5_000_000_000),
            };
        }
        let forward = i == 0 || rng.random_bool(0.55);
        let (src, dst) = if forward { (client, server) } else { (server, client) };
        let flags = if protocol == Protocol::Tcp {
            TcpFlags::from_bits_truncate(rng.random_range(0..64))
        } else {
            TcpFlags::empty()
        };
        let p = PacketRecord {
            timestamp: Timestamp::from_nanos(t),
            src_ip: src.ip,
            dst_ip: dst.ip,
            src_port: src.port,
            dst_port: dst.port,
            protocol,
            ip_total_length: rng.random_range(protocol.min_ip_total_length()..=1500),
            tcp_flags: flags,
        };
        if forward {
            fwd.push(p);
        } else {
            bwd.push(p);
        }
    }
    BiFlow {
        key: FlowKey::new(client, server, protocol),
        initiator: client,
        fwd_packets: fwd,
        bwd_packets: bwd,
        start_time: Timestamp::from_nanos(start),
        end_time: Timestamp::from_nanos(t),
    }
}

/// Largest relative gap between analytic and central-difference gradients.
///
/// The denominator is floored at `1e-6` so near-zero gradients are judged on
/// their absolute gap.
pub fn max_gradient_error(model: &MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss) -> f64 {
    let eps = 1e-5;
    let (_, grads) = loss_and_gradients(model, inputs, targets, loss).unwrap();
    let loss_at = |m: &MlpModel| loss_and_gradients(m, inputs, targets, loss).unwrap().0;
    let mut worst: f64 = 0.0;
    for l in 0..model.layers.len() {
        let mut check = |analytic: f64, set: &dyn Fn(&mut MlpModel, f64)| {
            let mut plus = model.clone();
            set(&mut plus, eps);
            let mut minus = model.clone();
            set(&mut minus, -eps);
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let diff = (analytic - numeric).abs();
            worst = worst.max(diff / analytic.abs().max(numeric.abs()).max(1e-6));
        };
        for w in 0..model.layers[l].weights.len() {
            check(grads.layers[l].weights[w], &|m, d| m.layers[l].weights[w] += d);
        }
        for b in 0..model.layers[l].biases.len() {
            check(grads.layers[l].biases[b], &|m, d| m.layers[l].biases[b] += d);
        }
    }
    worst
}

/// A random network with random biases and a small random batch.
pub fn random_case(rng: &mut ChaCha8Rng) -> (MlpModel, Vec<Vec<f64>>, Vec<Vec<f64>>, Loss) {
    let inputs = rng.random_range(1..=10);
    let hidden = rng.random_range(1..=8);
    let outputs = rng.random_range(1..=5);
    let act = [Activation::Relu, Activation::Tanh, Activation::Sigmoid][rng.random_range(0..3)];
    let (out, loss) = match rng.random_range(0..3) {
        0 => (OutputActivation::Softmax, Loss::CrossEntropy),
        1 => (OutputActivation::Sigmoid, Loss::Mse),
        _ => (OutputActivation::Identity, Loss::Mse),
    };
    let mut model = MlpModel::new(&[inputs, hidden, outputs], act, out, rng.random()).unwrap();
    for layer in &mut model.layers {
        for b in &mut layer.biases {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let batch = rng.random_range(1..6);
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<Vec<f64>> = (0..batch)
        .map(|_| match loss {
            Loss::CrossEntropy => {
                let mut t = vec![0.0; outputs];
                t[rng.random_range(0..outputs)] = 1.0;
                t
            }
            Loss::Mse => (0..outputs).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect();
    (model, xs, ys, loss)
}

/// The mimicking scenario as aggregated rows grouped benign, then slowloris.
pub fn mimicking_groups(seed: u64) -> Vec<(String, Vec<FlowFeatureVector>)> {
    let scenario = synth::generate(&ScenarioSpec::mimicking(seed)).unwrap();
    let extraction = pipeline::extract(&scenario.packets, &FlowTimeouts::default(), Some(&scenario.labels));
    assert_eq!(extraction.unlabeled, 0);
    let rows = aggregation::aggregate(extraction.rows, Window::Unbounded).unwrap();
    pipeline::split_by_label(&rows, &["benign", "slowloris"]).unwrap()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
