//! Labeled feature matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{all_feature_names, is_aggregation_feature, FlowFeatureVector, FLOW_FEATURE_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Index into `class_names` for every row.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Schema(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != feature_names.len()) {
            return Err(Error::Dimension {
                expected: feature_names.len(),
                actual: r.len(),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Schema(format!("label index {l} has no class name")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature matrix contains non-finite values".into()));
        }
        Ok(Dataset {
            feature_names,
            rows,
            labels,
            class_names,
        })
    }

    /// Builds a matrix from groups of flow rows, one class per group, in the given order.
    ///
    /// With `with_aggregation` the two bundle features are included and every
    /// row must already carry them.
    pub fn from_classes(groups: &[(String, Vec<FlowFeatureVector>)], with_aggregation: bool) -> Result<Self> {
        let names: Vec<String> = if with_aggregation {
            all_feature_names()
        } else {
            FLOW_FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
        };
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (class, (name, flows)) in groups.iter().enumerate() {
            for f in flows {
                let row = if with_aggregation {
                    let (Some(n), Some(d)) = (f.num_flows, f.src_ports_delta) else {
                        return Err(Error::Schema(format!(
                            "a `{name}` row lacks aggregation features; run aggregation first"
                        )));
                    };
                    let mut v = f.flow_values().to_vec();
                    v.extend([n as f64, d]);
                    v
                } else {
                    f.flow_values().to_vec()
                };
                rows.push(row);
                labels.push(class);
            }
        }
        Dataset::new(names, rows, labels, groups.iter().map(|(n, _)| n.clone()).collect())
    }

    /// Groups rows by their label column; classes are ordered with `benign` first, then alphabetically.
    pub fn from_labeled_flows(flows: &[FlowFeatureVector], with_aggregation: bool) -> Result<Self> {
        let mut by_label: BTreeMap<String, Vec<FlowFeatureVector>> = BTreeMap::new();
        for f in flows {
            by_label.entry(f.meta.label.clone()).or_default().push(f.clone());
        }
        let mut groups: Vec<(String, Vec<FlowFeatureVector>)> = by_label.into_iter().collect();
        if let Some(pos) = groups.iter().position(|(n, _)| n == crate::features::DEFAULT_LABEL) {
            let benign = groups.remove(pos);
            groups.insert(0, benign);
        }
        Dataset::from_classes(&groups, with_aggregation)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Keeps only the named columns, in the order given.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Schema(format!("feature `{n}` is not in the data")))
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            feature_names: names.to_vec(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        })
    }

    pub fn without_aggregation(&self) -> Self {
        let keep: Vec<String> = self
            .feature_names
            .iter()
            .filter(|n| !is_aggregation_feature(n))
            .cloned()
            .collect();
        self.select(&keep).expect("names come from the dataset")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}
