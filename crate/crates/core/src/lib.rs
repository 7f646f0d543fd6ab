//! Flow aggregation features for network intrusion detection.
//!
//! The crate turns raw pcap captures into labelled feature matrices at three
//! levels of abstraction (packets, bidirectional flows, and bundles of flows
//! that share an initiator), and provides the small neural-network tooling
//! used to evaluate them: recursive feature elimination, stratified k-fold
//! evaluation and an autoencoder zero-day detector.
//!
//! ```
//! use flowbundle::{aggregation, features, flow, synth};
//!
//! let scenario = synth::fig2_replay();
//! let flows = flow::assemble_flows(&scenario.packets, &flow::FlowTimeouts::default());
//! let bundles = aggregation::bundle_flows(&flows, aggregation::Window::Unbounded).unwrap();
//! let mut sizes: Vec<u64> = bundles.iter().map(|b| b.num_flows).collect();
//! sizes.sort_unstable_by(|a, b| b.cmp(a));
//! assert_eq!(sizes, [4, 2, 1, 1]);
//! ```
//!
//! The `book/` directory next to this crate walks through each stage.

pub mod aggregation;
pub mod capture;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod flow;
pub mod nn;
pub mod packet;
pub mod pipeline;
pub mod rfe;
pub mod synth;
pub mod zeroday;

pub use error::{Error, Result};

/// Seed used by the experiments and the command line when none is given.
pub const DEFAULT_SEED: u64 = 7;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/capture.md")]
    mod capture {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/neural_net.md")]
    mod neural_net {}
    #[doc = include_str!("../../../book/src/rfe.md")]
    mod rfe {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/zero_day.md")]
    mod zero_day {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
