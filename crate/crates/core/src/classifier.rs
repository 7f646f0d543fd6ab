//! A scaled, trained network bundled with the schema it was trained on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Loss, MinMaxScaler, MlpModel, OutputActivation, TrainingConfig};

/// Architecture and optimiser settings for a softmax classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub training: TrainingConfig,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            hidden_layers: vec![3],
            hidden_activation: Activation::Relu,
            training: TrainingConfig::default(),
        }
    }
}

impl ClassifierSpec {
    pub fn with_hidden(hidden: usize) -> Self {
        ClassifierSpec {
            hidden_layers: vec![hidden],
            ..ClassifierSpec::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.training.seed = seed;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub scaler: MinMaxScaler,
    pub model: MlpModel,
}

impl Classifier {
    /// Fits the scaler on `data`, then trains a fresh network on the scaled rows.
    pub fn fit(data: &Dataset, spec: &ClassifierSpec) -> Result<(Self, Vec<f64>)> {
        if data.num_classes() < 2 {
            return Err(Error::Config("classification needs at least two classes".into()));
        }
        if let Some(empty) = data.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "class `{}` has no training samples",
                data.class_names[empty]
            )));
        }
        let scaler = MinMaxScaler::fit(&data.rows)?;
        let inputs = scaler.transform_all(&data.rows)?;
        let targets = nn::one_hot(&data.labels, data.num_classes());

        let mut sizes = vec![data.num_features()];
        sizes.extend(&spec.hidden_layers);
        sizes.push(data.num_classes());
        let model = MlpModel::new(
            &sizes,
            spec.hidden_activation,
            OutputActivation::Softmax,
            spec.training.seed,
        )?;
        let cfg = TrainingConfig {
            loss: Loss::CrossEntropy,
            ..spec.training
        };
        let out = nn::train(model, &inputs, &targets, &cfg)?;
        Ok((
            Classifier {
                feature_names: data.feature_names.clone(),
                class_names: data.class_names.clone(),
                scaler,
                model: out.model,
            },
            out.loss_history,
        ))
    }

    pub fn predict(&self, row: &[f64]) -> Result<usize> {
        self.model.predict_class(&self.scaler.transform(row)?)
    }

    /// Predictions for every row of `data`, after checking the schema matches.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<usize>> {
        if data.feature_names != self.feature_names {
            return Err(Error::Schema(format!(
                "model expects features {:?}, data has {:?}",
                self.feature_names, data.feature_names
            )));
        }
        data.rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::write_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        nn::read_json(path.as_ref())
    }
}
