//! The TOML pipeline configuration and how it merges with flags and defaults.
//!
//! Every value resolves in the same order: a command-line flag wins over the
//! config file, which wins over the library default.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use flowbundle::aggregation::Window;
use flowbundle::evaluation::ExperimentConfig;
use flowbundle::flow::FlowTimeouts;
use flowbundle::nn::Activation;
use flowbundle::zeroday::{AutoencoderConfig, ThresholdPolicy};
use flowbundle::{Error, DEFAULT_SEED};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub aggregation: AggregationSection,
    #[serde(default)]
    pub rfe: RfeSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub zeroday: ZeroDaySection,
}

/// A number of seconds, or the word `none`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Seconds {
    Value(f64),
    Word(String),
}

impl Seconds {
    fn as_option(&self, key: &str) -> Result<Option<f64>> {
        match self {
            Seconds::Value(v) => Ok(Some(*v)),
            Seconds::Word(w) if w.eq_ignore_ascii_case("none") => Ok(None),
            Seconds::Word(w) => {
                Err(Error::Config(format!("{key} must be a number of seconds or \"none\", got \"{w}\"")).into())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub idle_timeout: Option<f64>,
    pub active_timeout: Option<Seconds>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSection {
    pub window: Option<Seconds>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfeSection {
    pub k: Option<usize>,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    /// `0` means full batch.
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub folds: Option<usize>,
    pub extended_extra_features: Option<usize>,
    pub extended_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroDaySection {
    pub hidden: Option<usize>,
    pub activation: Option<Activation>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
}

/// Overrides collected from command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub idle_timeout: Option<f64>,
    pub active_timeout: Option<String>,
    pub window: Option<String>,
    pub k: Option<usize>,
    pub step: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub folds: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            Error::Config(format!("config {}: {}", path.display(), msg.trim())).into()
        })
    }

    pub fn seed(&self, o: &Overrides) -> u64 {
        o.seed.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn timeouts(&self, o: &Overrides) -> Result<FlowTimeouts> {
        let idle = o
            .idle_timeout
            .or(self.flow.idle_timeout)
            .unwrap_or(FlowTimeouts::DEFAULT_IDLE_S);
        let active = match (&o.active_timeout, &self.flow.active_timeout) {
            (Some(flag), _) => Seconds::Word(flag.clone()).parsed("--active-timeout")?,
            (None, Some(v)) => v.as_option("flow.active_timeout")?,
            (None, None) => Some(FlowTimeouts::DEFAULT_ACTIVE_S),
        };
        Ok(FlowTimeouts::new(idle, active)?)
    }

    pub fn window(&self, o: &Overrides) -> Result<Window> {
        match (&o.window, &self.aggregation.window) {
            (Some(flag), _) => Ok(flag.parse()?),
            (None, Some(v)) => match v.as_option("aggregation.window")? {
                None => Ok(Window::Unbounded),
                Some(secs) => Ok(Window::tumbling(secs)?),
            },
            (None, None) => Ok(Window::default()),
        }
    }

    pub fn experiment(&self, o: &Overrides) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: self.seed(o),
            ..ExperimentConfig::default()
        };
        if let Some(f) = o.folds.or(self.evaluation.folds) {
            cfg.folds = f;
        }
        if let Some(n) = self.evaluation.extended_extra_features {
            cfg.extended_extra_features = n;
        }
        if let Some(h) = self.evaluation.extended_hidden {
            cfg.extended_hidden = h;
        }
        if let Some(k) = o.k.or(self.rfe.k) {
            cfg.rfe.k = k;
        }
        if let Some(s) = o.step.or(self.rfe.step) {
            cfg.rfe.step = s;
        }
        for spec in [&mut cfg.classifier, &mut cfg.rfe.estimator] {
            if let Some(h) = o.hidden.clone().or_else(|| self.network.hidden.clone()) {
                spec.hidden_layers = h;
            }
            if let Some(a) = o.activation.or(self.network.activation) {
                spec.hidden_activation = a;
            }
            if let Some(lr) = o.learning_rate.or(self.training.learning_rate) {
                spec.training.learning_rate = lr;
            }
            if let Some(e) = o.epochs.or(self.training.epochs) {
                spec.training.epochs = e;
            }
            if let Some(b) = o.batch_size.or(self.training.batch_size) {
                spec.training.batch_size = (b > 0).then_some(b);
            }
            spec.training.seed = cfg.seed;
        }
        cfg
    }

    /// Autoencoder settings. Only the `[zeroday]` section applies here, so
    /// classifier training flags never leak into the detector.
    pub fn autoencoder(&self, o: &Overrides) -> AutoencoderConfig {
        let mut cfg = AutoencoderConfig::default();
        let z = &self.zeroday;
        if let Some(h) = z.hidden {
            cfg.hidden = Some(h);
        }
        if let Some(a) = z.activation {
            cfg.hidden_activation = a;
        }
        if let Some(lr) = z.learning_rate {
            cfg.training.learning_rate = lr;
        }
        if let Some(e) = z.epochs {
            cfg.training.epochs = e;
        }
        if let Some(b) = z.batch_size {
            cfg.training.batch_size = (b > 0).then_some(b);
        }
        cfg.training.seed = self.seed(o);
        cfg
    }

    pub fn thresholds(&self, o: &Overrides) -> Result<ThresholdPolicy> {
        match o.thresholds.clone().or_else(|| self.zeroday.thresholds.clone()) {
            Some(t) => Ok(ThresholdPolicy::new(t)?),
            None => Ok(ThresholdPolicy::default()),
        }
    }
}

impl Seconds {
    fn parsed(&self, key: &str) -> Result<Option<f64>> {
        match self {
            Seconds::Word(w) if !w.eq_ignore_ascii_case("none") => w
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key} must be a number of seconds or `none`, got `{w}`")).into()),
            other => other.as_option(key),
        }
    }
}
