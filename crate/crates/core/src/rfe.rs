//! Recursive feature elimination driven by first-layer weight magnitudes.
//!
//! Each round trains a fresh network on the surviving columns, scores every
//! input by the sum of the absolute weights leaving it, and drops the
//! weakest. Columns that are constant over the data carry no signal and are
//! dropped before any scored column.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierSpec;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Loss, MinMaxScaler, MlpModel, OutputActivation, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfeConfig {
    pub k: usize,
    pub step: usize,
    /// Network trained in every round.
    pub estimator: ClassifierSpec,
}

impl Default for RfeConfig {
    fn default() -> Self {
        RfeConfig {
            k: 5,
            step: 1,
            estimator: ClassifierSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeRound {
    pub remaining: Vec<String>,
    pub importance: Vec<f64>,
    pub removed: Vec<String>,
}

/// Survivors ranked by final importance, plus the elimination history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeOutcome {
    pub selected: Vec<String>,
    /// Eliminated features, earliest first.
    pub eliminated: Vec<String>,
    pub rounds: Vec<RfeRound>,
}

impl RfeOutcome {
    /// The `n` strongest features: survivors first, then the most recently eliminated.
    pub fn top(&self, n: usize) -> Vec<String> {
        self.selected
            .iter()
            .chain(self.eliminated.iter().rev())
            .take(n)
            .cloned()
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::write_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        nn::read_json(path.as_ref())
    }
}

pub fn rfe_select(data: &Dataset, cfg: &RfeConfig) -> Result<RfeOutcome> {
    let total = data.num_features();
    if cfg.k == 0 || cfg.k > total {
        return Err(Error::Config(format!(
            "RFE target k = {} must lie between 1 and the {total} available features",
            cfg.k
        )));
    }
    if cfg.step == 0 {
        return Err(Error::Config("RFE step must be at least 1".into()));
    }
    let present = data.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Config("RFE needs samples from at least two classes".into()));
    }

    let scaler = MinMaxScaler::fit(&data.rows)?;
    let scaled = scaler.transform_all(&data.rows)?;
    let constant = scaler.constant_columns();
    let targets = nn::one_hot(&data.labels, data.num_classes());

    let mut remaining: Vec<usize> = (0..total).collect();
    let mut eliminated = Vec::new();
    let mut rounds = Vec::new();
    let mut round = 0u64;

    while remaining.len() > cfg.k {
        let importance = round_importance(&scaled, &targets, &remaining, data.num_classes(), cfg, round)?;
        let drop = (remaining.len() - cfg.k).min(cfg.step);
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        // weakest first: constant columns, then lowest importance, then lowest index
        order.sort_by(|&a, &b| {
            let (ca, cb) = (constant[remaining[a]], constant[remaining[b]]);
            cb.cmp(&ca)
                .then(importance[a].total_cmp(&importance[b]))
                .then(remaining[a].cmp(&remaining[b]))
        });
        let mut removed_pos: Vec<usize> = order[..drop].to_vec();
        let removed: Vec<String> = removed_pos
            .iter()
            .map(|&p| data.feature_names[remaining[p]].clone())
            .collect();
        rounds.push(RfeRound {
            remaining: remaining.iter().map(|&i| data.feature_names[i].clone()).collect(),
            importance: importance.clone(),
            removed: removed.clone(),
        });
        eliminated.extend(removed);
        removed_pos.sort_unstable_by(|a, b| b.cmp(a));
        for p in removed_pos {
            remaining.remove(p);
        }
        round += 1;
    }

    let last_importance = round_importance(&scaled, &targets, &remaining, data.num_classes(), cfg, round)?;
    let mut ranked: Vec<usize> = (0..remaining.len()).collect();
    ranked.sort_by(|&a, &b| {
        last_importance[b]
            .total_cmp(&last_importance[a])
            .then(remaining[a].cmp(&remaining[b]))
    });
    Ok(RfeOutcome {
        selected: ranked
            .iter()
            .map(|&p| data.feature_names[remaining[p]].clone())
            .collect(),
        eliminated,
        rounds,
    })
}

fn round_importance(
    scaled: &[Vec<f64>],
    targets: &[Vec<f64>],
    columns: &[usize],
    classes: usize,
    cfg: &RfeConfig,
    round: u64,
) -> Result<Vec<f64>> {
    let inputs: Vec<Vec<f64>> = scaled.iter().map(|r| columns.iter().map(|&c| r[c]).collect()).collect();
    let spec = &cfg.estimator;
    let seed = spec.training.seed.wrapping_add(round.wrapping_mul(0x9E37_79B9));
    let mut sizes = vec![columns.len()];
    sizes.extend(&spec.hidden_layers);
    sizes.push(classes);
    let model = MlpModel::new(&sizes, spec.hidden_activation, OutputActivation::Softmax, seed)?;
    let training = TrainingConfig {
        loss: Loss::CrossEntropy,
        seed,
        ..spec.training
    };
    let trained = nn::train(model, &inputs, targets, &training)?;
    Ok(trained.model.input_importance())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(cols: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| (0..cols).map(|c| ((i * (c + 3)) % 7) as f64).collect())
            .collect();
        let labels = (0..40).map(|i| i % 2).collect();
        Dataset::new(
            (0..cols).map(|c| format!("f{c}")).collect(),
            rows,
            labels,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn quick() -> RfeConfig {
        let mut cfg = RfeConfig::default();
        cfg.estimator.training.epochs = 5;
        cfg
    }

    #[test]
    fn k_equal_to_width_keeps_everything() {
        let cfg = RfeConfig { k: 4, ..quick() };
        let out = rfe_select(&data(4), &cfg).unwrap();
        assert_eq!(out.selected.len(), 4);
        assert!(out.eliminated.is_empty());
    }

    #[test]
    fn partition_and_trace_length() {
        let cfg = RfeConfig { k: 2, ..quick() };
        let out = rfe_select(&data(6), &cfg).unwrap();
        assert_eq!(out.selected.len(), 2);
        assert_eq!(out.eliminated.len(), 4);
        let mut all: Vec<_> = out.selected.iter().chain(&out.eliminated).cloned().collect();
        all.sort();
        assert_eq!(all, ["f0", "f1", "f2", "f3", "f4", "f5"]);
        assert_eq!(out.top(3)[..2], out.selected[..]);
    }

    #[test]
    fn larger_steps_finish_in_fewer_rounds() {
        let cfg = RfeConfig {
            k: 1,
            step: 2,
            ..quick()
        };
        let out = rfe_select(&data(6), &cfg).unwrap();
        assert_eq!(out.rounds.len(), 3);
        assert_eq!(out.selected.len(), 1);
    }

    #[test]
    fn constant_columns_go_first() {
        let mut d = data(4);
        for r in &mut d.rows {
            r[2] = 1.0;
        }
        let out = rfe_select(&d, &RfeConfig { k: 3, ..quick() }).unwrap();
        assert_eq!(out.eliminated, ["f2"]);
    }

    #[test]
    fn bad_configs() {
        assert!(rfe_select(&data(3), &RfeConfig { k: 4, ..quick() }).is_err());
        assert!(rfe_select(&data(3), &RfeConfig { k: 0, ..quick() }).is_err());
        assert!(rfe_select(&data(3), &RfeConfig { step: 0, ..quick() }).is_err());
    }
}
