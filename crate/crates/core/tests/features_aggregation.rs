mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{close, oracle_flow_features, oracle_ports_delta, random_flow};
use flowbundle::aggregation::{aggregate, bundle_flows, ports_delta, propagate, Window};
use flowbundle::features::{extract_features, read_csv, write_csv, FLOW_FEATURE_NAMES};
use flowbundle::flow::{assemble_flows, FlowTimeouts};
use flowbundle::synth;
use flowbundle::Error;

#[test]
fn features_match_brute_force_on_random_flows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..300 {
        let flow = random_flow(&mut rng, 50);
        let got = extract_features(&flow, "x").flow_values();
        let want = oracle_flow_features(&flow);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!(close(*g, *w, 1e-9), "{}: got {g}, oracle {w}", FLOW_FEATURE_NAMES[i]);
        }
    }
}

#[test]
fn features_are_independent_of_packet_order_within_a_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let flow = random_flow(&mut rng, 30);
        let mut reversed = flow.clone();
        reversed.fwd_packets.reverse();
        reversed.bwd_packets.reverse();
        let a = extract_features(&flow, "x");
        let b = extract_features(&reversed, "x");
        assert_eq!(a.meta, b.meta);
        for (x, y) in a.flow_values().iter().zip(b.flow_values()) {
            assert!(close(*x, y, 1e-12), "{x} vs {y}");
        }
    }
}

#[test]
fn csv_round_trip_keeps_counts_exact_and_floats_to_six_places() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<_> = (0..40)
        .map(|i| {
            extract_features(
                &random_flow(&mut rng, 20),
                if i % 3 == 0 { "slowloris" } else { "benign" },
            )
        })
        .collect();
    let rows = aggregate(rows, Window::Unbounded).unwrap();
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let back = read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.num_flows, b.num_flows);
        for (x, y) in a.flow_values().iter().zip(b.flow_values()) {
            assert!((x - y).abs() <= 5e-7, "{x} vs {y}");
        }
    }
}

#[test]
fn ports_delta_matches_oracle_on_random_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let ports: Vec<u16> = (0..n).map(|_| rng.random()).collect();
        assert_eq!(ports_delta(&ports).unwrap(), oracle_ports_delta(&ports), "{ports:?}");
    }
}

#[test]
fn ports_delta_edge_cases() {
    assert!(matches!(ports_delta(&[]), Err(Error::Domain(_))));
    assert_eq!(ports_delta(&[7]).unwrap(), 0.0);
    assert_eq!(ports_delta(&[9, 9, 9]).unwrap(), 0.0);
    assert_eq!(ports_delta(&[0, 65535]).unwrap(), 65535.0);
}

#[test]
fn fig2_replay_yields_four_bundles_and_stamps_every_row() {
    let scenario = synth::fig2_replay();
    let flows = assemble_flows(&scenario.packets, &FlowTimeouts::default());
    assert_eq!(flows.len(), 8);
    let bundles = bundle_flows(&flows, Window::Unbounded).unwrap();
    let mut sizes: Vec<u64> = bundles.iter().map(|b| b.num_flows).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, [4, 2, 1, 1]);

    let rows: Vec<_> = flows.iter().map(|f| extract_features(f, "benign")).collect();
    let stamped = propagate(&bundles, rows).unwrap();
    for row in &stamped {
        let bundle = bundles
            .iter()
            .find(|b| b.initiator_ip == row.meta.initiator.ip)
            .unwrap();
        assert_eq!(row.num_flows, Some(bundle.num_flows));
        assert_eq!(row.src_ports_delta, Some(bundle.src_ports_delta));
    }
}

#[test]
fn tumbling_windows_split_bundles() {
    let scenario = synth::fig2_replay();
    let flows = assemble_flows(&scenario.packets, &FlowTimeouts::default());
    let whole = bundle_flows(&flows, Window::Unbounded).unwrap();
    let tiny = bundle_flows(&flows, Window::tumbling(0.001).unwrap()).unwrap();
    assert!(tiny.len() >= whole.len());
    let total: u64 = tiny.iter().map(|b| b.num_flows).sum();
    assert_eq!(total, flows.len() as u64);
}

#[test]
fn propagate_rejects_rows_without_a_bundle() {
    let scenario = synth::fig2_replay();
    let flows = assemble_flows(&scenario.packets, &FlowTimeouts::default());
    let bundles = bundle_flows(&flows[..4], Window::Unbounded).unwrap();
    let rows: Vec<_> = flows.iter().map(|f| extract_features(f, "benign")).collect();
    assert!(matches!(propagate(&bundles, rows), Err(Error::Consistency(_))));
}

proptest! {
    #[test]
    fn ports_delta_is_permutation_invariant(mut ports in prop::collection::vec(any::<u16>(), 1..200), seed in any::<u64>()) {
        let before = ports_delta(&ports).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..ports.len()).rev() {
            ports.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(ports_delta(&ports).unwrap(), before);
    }

    #[test]
    fn arithmetic_port_sequences_have_delta_equal_to_step(start in 0u32..65535, step in 1u32..500, count in 2u32..200) {
        let count = count.min((65535 - start) / step + 1);
        prop_assume!(count >= 2);
        let ports: Vec<u16> = (0..count).map(|i| (start + i * step) as u16).collect();
        prop_assert_eq!(ports_delta(&ports).unwrap(), f64::from(step));
    }

    #[test]
    fn ports_delta_is_bounded_by_the_port_span(ports in prop::collection::vec(any::<u16>(), 2..100)) {
        let d = ports_delta(&ports).unwrap();
        let lo = *ports.iter().min().unwrap() as f64;
        let hi = *ports.iter().max().unwrap() as f64;
        prop_assert!(d >= 0.0);
        prop_assert!((d * (ports.len() - 1) as f64 - (hi - lo)).abs() < 1e-6);
    }

    #[test]
    fn bundles_partition_flows_by_initiator(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flows: Vec<_> = (0..n).map(|_| random_flow(&mut rng, 4)).collect();
        let bundles = bundle_flows(&flows, Window::Unbounded).unwrap();
        let mut seen = vec![0usize; n];
        let mut per_ip: BTreeMap<_, u64> = BTreeMap::new();
        for f in &flows {
            *per_ip.entry(f.initiator.ip).or_default() += 1;
        }
        for b in &bundles {
            prop_assert_eq!(b.num_flows as usize, b.member_flows.len());
            prop_assert_eq!(per_ip[&b.initiator_ip], b.num_flows);
            let ports: Vec<u16> = b.member_flows.iter().map(|&i| flows[i].initiator.port).collect();
            prop_assert_eq!(b.src_ports_delta, oracle_ports_delta(&ports));
            for &i in &b.member_flows {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}
