//! Zero-day detection by autoencoder reconstruction error.
//!
//! An autoencoder is fitted on benign rows only (after min-max scaling to
//! `[0, 1]` with a scaler fitted on the same rows). A sample is flagged as an
//! attack when its reconstruction error is strictly greater than a threshold.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Loss, MinMaxScaler, MlpModel, OutputActivation, TrainingConfig};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.15, 0.10, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    thresholds: Vec<f64>,
}

impl ThresholdPolicy {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("thresholds must lie in (0, 1), got {t}")));
        }
        Ok(ThresholdPolicy { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Strictly greater than the threshold.
    pub fn flags(error: f64, threshold: f64) -> bool {
        error > threshold
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Bottleneck width; `None` means half the input width, rounded up.
    pub hidden: Option<usize>,
    pub hidden_activation: Activation,
    pub training: TrainingConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden: None,
            hidden_activation: Activation::Relu,
            training: TrainingConfig {
                learning_rate: 0.5,
                epochs: 50,
                batch_size: Some(32),
                loss: Loss::Mse,
                ..TrainingConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroDayDetector {
    pub feature_names: Vec<String>,
    pub scaler: MinMaxScaler,
    pub model: MlpModel,
}

/// Fits the scaler and autoencoder on benign rows.
pub fn fit_benign(feature_names: &[String], benign: &[Vec<f64>], cfg: &AutoencoderConfig) -> Result<ZeroDayDetector> {
    if benign.is_empty() {
        return Err(Error::Domain(
            "cannot fit a zero-day detector on an empty benign set".into(),
        ));
    }
    if let Some(r) = benign.iter().find(|r| r.len() != feature_names.len()) {
        return Err(Error::Dimension {
            expected: feature_names.len(),
            actual: r.len(),
        });
    }
    if benign.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("benign features must be finite".into()));
    }
    let scaler = MinMaxScaler::fit(benign)?;
    let scaled = scaler.transform_all(benign)?;
    let width = feature_names.len();
    let hidden = cfg.hidden.unwrap_or(width.div_ceil(2));
    let model = MlpModel::new(
        &[width, hidden, width],
        cfg.hidden_activation,
        OutputActivation::Sigmoid,
        cfg.training.seed,
    )?;
    let training = TrainingConfig {
        loss: Loss::Mse,
        ..cfg.training
    };
    let trained = nn::train(model, &scaled, &scaled, &training)?;
    Ok(ZeroDayDetector {
        feature_names: feature_names.to_vec(),
        scaler,
        model: trained.model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub flagged: usize,
    pub total: usize,
    /// Fraction flagged: the accuracy when every sample is an attack.
    pub attack_accuracy: f64,
    /// Fraction not flagged: the accuracy when every sample is benign.
    pub benign_accuracy: f64,
}

impl ZeroDayDetector {
    pub fn reconstruction_errors(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|s| self.model.reconstruction_error(&self.scaler.transform(s)?))
            .collect()
    }

    /// Checks that `names` matches the training schema before scoring.
    pub fn detect_named(
        &self,
        names: &[String],
        samples: &[Vec<f64>],
        policy: &ThresholdPolicy,
    ) -> Result<Vec<ThresholdResult>> {
        if names != self.feature_names.as_slice() {
            return Err(Error::Schema(format!(
                "detector was trained on {:?}, samples have {:?}",
                self.feature_names, names
            )));
        }
        self.detect(samples, policy)
    }

    pub fn detect(&self, samples: &[Vec<f64>], policy: &ThresholdPolicy) -> Result<Vec<ThresholdResult>> {
        let errors = self.reconstruction_errors(samples)?;
        Ok(score_errors(&errors, policy))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::write_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        nn::read_json(path.as_ref())
    }
}

/// Applies each threshold independently to precomputed errors.
pub fn score_errors(errors: &[f64], policy: &ThresholdPolicy) -> Vec<ThresholdResult> {
    let total = errors.len();
    policy
        .thresholds()
        .iter()
        .map(|&threshold| {
            let flagged = errors.iter().filter(|&&e| ThresholdPolicy::flags(e, threshold)).count();
            let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
            ThresholdResult {
                threshold,
                flagged,
                total,
                attack_accuracy: frac(flagged),
                benign_accuracy: frac(total - flagged),
            }
        })
        .collect()
}
