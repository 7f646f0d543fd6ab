//! End-to-end workflows composed from the individual stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregation::{self, Window};
use crate::capture::Capture;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{run_comparison, Comparison, Design, ExperimentConfig};
use crate::features::{extract_features, FlowFeatureVector, DEFAULT_LABEL, FLOW_FEATURE_NAMES};
use crate::flow::{assemble_flows, FlowTimeouts};
use crate::packet::PacketRecord;
use crate::rfe::{rfe_select, RfeConfig};
use crate::synth::{self, LabelManifest, ScenarioSpec};
use crate::zeroday::{fit_benign, AutoencoderConfig, ThresholdPolicy, ThresholdResult};

/// Flow rows plus how many flows had no manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub rows: Vec<FlowFeatureVector>,
    pub unlabeled: usize,
}

/// Packets → flows → feature rows. Flows missing from `labels` are labelled benign.
pub fn extract(packets: &[PacketRecord], timeouts: &FlowTimeouts, labels: Option<&LabelManifest>) -> Extraction {
    let flows = assemble_flows(packets, timeouts);
    let index = labels.map(LabelManifest::index);
    let mut unlabeled = 0;
    let rows = flows
        .iter()
        .map(|f| {
            let label = match &index {
                Some(ix) => ix.label_for(f).unwrap_or_else(|| {
                    unlabeled += 1;
                    DEFAULT_LABEL
                }),
                None => DEFAULT_LABEL,
            };
            extract_features(f, label)
        })
        .collect();
    Extraction { rows, unlabeled }
}

pub fn extract_capture(capture: &Capture, timeouts: &FlowTimeouts, labels: Option<&LabelManifest>) -> Extraction {
    extract(&capture.packets, timeouts, labels)
}

/// Splits rows by label, keeping the requested class order.
pub fn split_by_label(rows: &[FlowFeatureVector], classes: &[&str]) -> Result<Vec<(String, Vec<FlowFeatureVector>)>> {
    classes
        .iter()
        .map(|&c| {
            let members: Vec<FlowFeatureVector> = rows.iter().filter(|r| r.meta.label == c).cloned().collect();
            if members.is_empty() {
                Err(Error::Schema(format!("no rows labelled `{c}`")))
            } else {
                Ok((c.to_string(), members))
            }
        })
        .collect()
}

/// Everything the replication study needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateConfig {
    pub seed: u64,
    pub timeouts: FlowTimeouts,
    pub window: Window,
    pub experiment: ExperimentConfig,
    pub autoencoder: AutoencoderConfig,
    pub thresholds: ThresholdPolicy,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            seed: crate::DEFAULT_SEED,
            timeouts: FlowTimeouts::default(),
            window: Window::Unbounded,
            experiment: ExperimentConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            thresholds: ThresholdPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRun {
    pub name: String,
    pub classes: Vec<String>,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroDayRow {
    pub class: String,
    pub without_aggregation: Vec<ThresholdResult>,
    pub with_aggregation: Vec<ThresholdResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub seed: u64,
    pub flows_per_class: BTreeMap<String, usize>,
    /// RFE over all 36 columns for the five-class problem.
    pub rfe_all_features: Vec<String>,
    pub designs: Vec<DesignRun>,
    pub zero_day: Vec<ZeroDayRow>,
}

/// Generates the five-class scenario and runs every experiment on it.
pub fn replicate(cfg: &ReplicateConfig) -> Result<ReplicateReport> {
    let scenario = synth::generate(&ScenarioSpec::five_class(cfg.seed))?;
    let extraction = extract(&scenario.packets, &cfg.timeouts, Some(&scenario.labels));
    if extraction.unlabeled > 0 {
        return Err(Error::Consistency(format!(
            "{} generated flows have no label",
            extraction.unlabeled
        )));
    }
    let rows = aggregation::aggregate(extraction.rows, cfg.window)?;
    let mut flows_per_class = BTreeMap::new();
    for r in &rows {
        *flows_per_class.entry(r.meta.label.clone()).or_insert(0) += 1;
    }

    let mut experiment = cfg.experiment.clone();
    experiment.seed = cfg.seed;
    let plans: [(&str, Design, &[&str], bool); 6] = [
        ("binary slowloris", Design::Binary, &["benign", "slowloris"], false),
        (
            "binary slowhttptest",
            Design::Binary,
            &["benign", "slowhttptest"],
            false,
        ),
        (
            "three_class slowloris",
            Design::ThreeClass,
            &["benign", "portscan", "slowloris"],
            false,
        ),
        (
            "three_class slowhttptest",
            Design::ThreeClass,
            &["benign", "portscan", "slowhttptest"],
            false,
        ),
        (
            "five_class",
            Design::FiveClass,
            &["benign", "portscan", "slowloris", "slowhttptest", "hulk"],
            false,
        ),
        (
            "five_class extended",
            Design::FiveClass,
            &["benign", "portscan", "slowloris", "slowhttptest", "hulk"],
            true,
        ),
    ];
    let mut designs = Vec::new();
    for (name, design, classes, extended) in plans {
        let inputs = split_by_label(&rows, classes)?;
        designs.push(DesignRun {
            name: name.to_string(),
            classes: classes.iter().map(|s| s.to_string()).collect(),
            comparison: run_comparison(design, &inputs, extended, &experiment)?,
        });
    }

    let five = split_by_label(&rows, &["benign", "portscan", "slowloris", "slowhttptest", "hulk"])?;
    let all_columns = Dataset::from_classes(&five, true)?;
    let mut rfe_cfg: RfeConfig = experiment.rfe.clone();
    rfe_cfg.estimator.training.seed = cfg.seed;
    let rfe_all_features = rfe_select(&all_columns, &rfe_cfg)?.selected;

    let zero_day = zero_day_study(&five, &cfg.autoencoder, &cfg.thresholds, cfg.seed)?;
    Ok(ReplicateReport {
        seed: cfg.seed,
        flows_per_class,
        rfe_all_features,
        designs,
        zero_day,
    })
}

/// Fits benign-only autoencoders with and without the bundle features and scores every class.
///
/// The first group must be benign; its rows are split in half for training
/// and validation.
pub fn zero_day_study(
    groups: &[(String, Vec<FlowFeatureVector>)],
    ae: &AutoencoderConfig,
    policy: &ThresholdPolicy,
    seed: u64,
) -> Result<Vec<ZeroDayRow>> {
    let data = Dataset::from_classes(groups, true)?;
    let flow_names: Vec<String> = FLOW_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut ae = ae.clone();
    ae.training.seed = seed;

    let benign: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == 0).collect();
    let (train_idx, valid_idx): (Vec<usize>, Vec<usize>) = benign.iter().partition(|&&i| i % 2 == 0);

    let mut results: Vec<ZeroDayRow> = Vec::new();
    for with in [false, true] {
        let view = if with { data.clone() } else { data.select(&flow_names)? };
        let train = view.subset(&train_idx);
        let detector = fit_benign(&view.feature_names, &train.rows, &ae)?;
        for (class, name) in data.class_names.iter().enumerate() {
            let idx: Vec<usize> = if class == 0 {
                valid_idx.clone()
            } else {
                (0..data.len()).filter(|&i| data.labels[i] == class).collect()
            };
            let scored = detector.detect(&view.subset(&idx).rows, policy)?;
            let label = if class == 0 {
                format!("{name} (validation)")
            } else {
                name.clone()
            };
            if with {
                results[class].with_aggregation = scored;
            } else {
                results.push(ZeroDayRow {
                    class: label,
                    without_aggregation: scored,
                    with_aggregation: Vec::new(),
                });
            }
        }
    }
    Ok(results)
}

impl ReplicateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "replication study, seed {}", self.seed);
        for (class, n) in &self.flows_per_class {
            let _ = writeln!(s, "  {class}: {n} flows");
        }
        let _ = writeln!(
            s,
            "RFE over all 36 features (five_class): {}",
            self.rfe_all_features.join(", ")
        );
        for d in &self.designs {
            let _ = writeln!(s, "\n== {} ==", d.name);
            s.push_str(&d.comparison.without.to_table());
            s.push_str(&d.comparison.with.to_table());
            let _ = writeln!(s, "recall change with aggregation:");
            for (a, b) in d.comparison.without.classes.iter().zip(&d.comparison.with.classes) {
                let _ = writeln!(
                    s,
                    "  {:<14} {:>7.2}% -> {:>7.2}%",
                    a.class,
                    a.recall.mean * 100.0,
                    b.recall.mean * 100.0
                );
            }
        }
        let _ = writeln!(s, "\n== zero-day detection accuracy (without -> with aggregation) ==");
        for row in &self.zero_day {
            let cells: Vec<String> = row
                .without_aggregation
                .iter()
                .zip(&row.with_aggregation)
                .map(|(a, b)| {
                    let pick = |r: &ThresholdResult| {
                        if row.class.ends_with("(validation)") {
                            r.benign_accuracy
                        } else {
                            r.attack_accuracy
                        }
                    };
                    format!(
                        "@{:.2}: {:6.2}% -> {:6.2}%",
                        a.threshold,
                        pick(a) * 100.0,
                        pick(b) * 100.0
                    )
                })
                .collect();
            let _ = writeln!(s, "  {:<20} {}", row.class, cells.join("   "));
        }
        s
    }
}
