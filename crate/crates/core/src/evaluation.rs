//! Cross-validated experiments with per-class precision, recall and F1.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, ClassifierSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{FlowFeatureVector, AGGREGATION_FEATURE_NAMES};
use crate::nn::{Activation, TrainingConfig};
use crate::rfe::{rfe_select, RfeConfig};

/// One-vs-rest tallies for every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Self {
        let mut c = ConfusionCounts::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.record(t, p);
        }
        c
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        if truth == predicted {
            self.tp[truth] += 1;
        } else {
            self.fn_[truth] += 1;
            self.fp[predicted] += 1;
        }
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    /// Number of samples tallied: every sample is a TP or an FN of its true class.
    pub fn total(&self) -> u64 {
        self.tp.iter().sum::<u64>() + self.fn_.iter().sum::<u64>()
    }

    pub fn precision(&self, class: usize) -> Metric {
        precision(self.tp[class], self.fp[class])
    }

    pub fn recall(&self, class: usize) -> Metric {
        recall(self.tp[class], self.fn_[class])
    }

    pub fn f1(&self, class: usize) -> Metric {
        f1(self.tp[class], self.fp[class], self.fn_[class])
    }
}

/// A ratio in `[0, 1]`; `undefined` marks a zero denominator, reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> Metric {
    if den == 0 {
        Metric {
            value: 0.0,
            undefined: true,
        }
    } else {
        Metric {
            value: num as f64 / den as f64,
            undefined: false,
        }
    }
}

/// `TP / (TP + FP)`
pub fn precision(tp: u64, fp: u64) -> Metric {
    ratio(tp, tp + fp)
}

/// `TP / (TP + FN)`
pub fn recall(tp: u64, fn_: u64) -> Metric {
    ratio(tp, tp + fn_)
}

/// `2TP / (2TP + FP + FN)`
pub fn f1(tp: u64, fp: u64, fn_: u64) -> Metric {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Stratified fold assignment: each class is shuffled, then dealt round-robin.
///
/// Returns the test indices of every fold.
pub fn stratified_folds(labels: &[usize], classes: &[String], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for (c, name) in classes.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < folds {
            return Err(Error::TooFewSamples {
                class: name.clone(),
                count: members.len(),
                folds,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    /// `mean% ± std%` with two decimals.
    pub fn percent(&self) -> String {
        format!("{:.2}% ± {:.2}%", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub design: String,
    pub with_aggregation: bool,
    pub folds: usize,
    pub hidden_layers: Vec<usize>,
    pub selected_features: Vec<String>,
    pub classes: Vec<ClassMetrics>,
    /// Confusion tallies summed over folds.
    pub confusion: ConfusionCounts,
}

impl ExperimentReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == name)
    }

    /// Aligned plain-text rendering of the per-class table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({}-fold, {} aggregation, hidden {:?})",
            self.design,
            self.folds,
            if self.with_aggregation { "with" } else { "without" },
            self.hidden_layers
        );
        let _ = writeln!(s, "features: {}", self.selected_features.join(", "));
        let width = self.classes.iter().map(|c| c.class.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            s,
            "{:<width$}  {:>20}  {:>20}  {:>20}",
            "class", "precision", "recall", "f1"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<width$}  {:>20}  {:>20}  {:>20}",
                c.class,
                c.precision.percent(),
                c.recall.percent(),
                c.f1.percent()
            );
        }
        s
    }
}

/// Trains on `folds - 1` parts and scores the held-out part, for every fold.
pub fn kfold_evaluate(data: &Dataset, folds: usize, spec: &ClassifierSpec, seed: u64) -> Result<ExperimentReport> {
    let test_folds = stratified_folds(&data.labels, &data.class_names, folds, seed)?;
    let classes = data.num_classes();

    let per_fold: Vec<ConfusionCounts> = test_folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let mut in_test = vec![false; data.len()];
            test.iter().for_each(|&i| in_test[i] = true);
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_test[i]).collect();
            let train = data.subset(&train_idx);
            let held_out = data.subset(test);
            let (model, _) = Classifier::fit(&train, &spec.with_seed(seed.wrapping_add(f as u64 + 1)))?;
            let predicted = model.predict_dataset(&held_out)?;
            Ok(ConfusionCounts::from_predictions(&held_out.labels, &predicted, classes))
        })
        .collect::<Result<_>>()?;

    let mut total = ConfusionCounts::new(classes);
    for c in &per_fold {
        for k in 0..classes {
            total.tp[k] += c.tp[k];
            total.fp[k] += c.fp[k];
            total.fn_[k] += c.fn_[k];
        }
    }
    let metric = |k: usize, m: fn(&ConfusionCounts, usize) -> Metric| {
        MeanStd::of(&per_fold.iter().map(|c| m(c, k).value).collect::<Vec<_>>())
    };
    Ok(ExperimentReport {
        design: "kfold".into(),
        with_aggregation: data
            .feature_names
            .iter()
            .any(|n| AGGREGATION_FEATURE_NAMES.contains(&n.as_str())),
        folds,
        hidden_layers: spec.hidden_layers.clone(),
        selected_features: data.feature_names.clone(),
        classes: (0..classes)
            .map(|k| ClassMetrics {
                class: data.class_names[k].clone(),
                precision: metric(k, ConfusionCounts::precision),
                recall: metric(k, ConfusionCounts::recall),
                f1: metric(k, ConfusionCounts::f1),
            })
            .collect(),
        confusion: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Binary,
    ThreeClass,
    FiveClass,
}

impl Design {
    pub fn class_count(self) -> usize {
        match self {
            Design::Binary => 2,
            Design::ThreeClass => 3,
            Design::FiveClass => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Design::Binary => "binary",
            Design::ThreeClass => "three_class",
            Design::FiveClass => "five_class",
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Design::Binary),
            "three_class" => Ok(Design::ThreeClass),
            "five_class" => Ok(Design::FiveClass),
            other => Err(Error::Config(format!(
                "unknown design `{other}`; expected binary, three_class or five_class"
            ))),
        }
    }
}

/// Knobs shared by every experiment design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub rfe: RfeConfig,
    pub classifier: ClassifierSpec,
    /// Extra RFE-ranked features and hidden width for the widened five-class run.
    pub extended_extra_features: usize,
    pub extended_hidden: usize,
    pub seed: u64,
}

/// Mini-batch settings used by the experiments: a full RFE plus k-fold run
/// trains dozens of networks, and these converge in a fraction of the
/// full-batch epochs. The experiments also use Tanh hidden units, since a
/// three-unit ReLU layer occasionally starts with every unit dead.
pub fn experiment_training() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 0.1,
        epochs: 30,
        batch_size: Some(64),
        seed: crate::DEFAULT_SEED,
        ..TrainingConfig::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let classifier = ClassifierSpec {
            hidden_activation: Activation::Tanh,
            training: experiment_training(),
            ..ClassifierSpec::default()
        };
        ExperimentConfig {
            folds: 5,
            rfe: RfeConfig {
                estimator: classifier.clone(),
                ..RfeConfig::default()
            },
            classifier,
            extended_extra_features: 5,
            extended_hidden: 8,
            seed: crate::DEFAULT_SEED,
        }
    }
}

pub const PORTSCAN_CLASS: &str = "portscan";

fn check_design(design: Design, inputs: &[(String, Vec<FlowFeatureVector>)], extended: bool) -> Result<()> {
    if inputs.len() != design.class_count() {
        return Err(Error::Config(format!(
            "{} design needs {} classes (benign plus {} attacks), got {}",
            design.name(),
            design.class_count(),
            design.class_count() - 1,
            inputs.len()
        )));
    }
    if design == Design::ThreeClass && !inputs.iter().any(|(n, _)| n.eq_ignore_ascii_case(PORTSCAN_CLASS)) {
        return Err(Error::Config("three_class design needs a `portscan` class".into()));
    }
    if extended && design != Design::FiveClass {
        return Err(Error::Config(
            "the extended feature mode applies to five_class only".into(),
        ));
    }
    if let Some((name, _)) = inputs.iter().find(|(_, rows)| rows.is_empty()) {
        return Err(Error::Config(format!("class `{name}` has no rows")));
    }
    Ok(())
}

/// RFE over the flow-level columns only, plus the resulting feature list and hidden width.
fn select_flow_features(
    inputs: &[(String, Vec<FlowFeatureVector>)],
    extended: bool,
    cfg: &ExperimentConfig,
) -> Result<(Dataset, Vec<String>, usize)> {
    let flow_only = Dataset::from_classes(inputs, false)?;
    let mut rfe_cfg = cfg.rfe.clone();
    rfe_cfg.estimator.training.seed = cfg.seed;
    let ranking = rfe_select(&flow_only, &rfe_cfg)?;
    let selection = if extended {
        (
            ranking.top(rfe_cfg.k + cfg.extended_extra_features),
            cfg.extended_hidden,
        )
    } else {
        (
            ranking.selected,
            cfg.classifier.hidden_layers.first().copied().unwrap_or(3),
        )
    };
    Ok((flow_only, selection.0, selection.1))
}

fn evaluate_selection(
    design: Design,
    inputs: &[(String, Vec<FlowFeatureVector>)],
    flow_only: &Dataset,
    features: &[String],
    hidden: usize,
    with_aggregation: bool,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let data = if with_aggregation {
        let mut names = features.to_vec();
        names.extend(AGGREGATION_FEATURE_NAMES.iter().map(|s| s.to_string()));
        Dataset::from_classes(inputs, true)?.select(&names)?
    } else {
        flow_only.select(features)?
    };
    let spec = ClassifierSpec {
        hidden_layers: vec![hidden],
        ..cfg.classifier.clone()
    };
    let mut report = kfold_evaluate(&data, cfg.folds, &spec, cfg.seed)?;
    report.design = design.name().to_string();
    report.with_aggregation = with_aggregation;
    Ok(report)
}

/// Runs one experiment design over per-class flow tables.
///
/// `inputs` lists benign first, then the attack classes. Features are chosen
/// by RFE over the flow-level columns only; the aggregated variant appends
/// the two bundle features to that same selection so both variants stay
/// comparable. `extended` widens the five-class run with the next-ranked RFE
/// features and a larger hidden layer.
pub fn run_experiment(
    design: Design,
    inputs: &[(String, Vec<FlowFeatureVector>)],
    with_aggregation: bool,
    extended: bool,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    check_design(design, inputs, extended)?;
    let (flow_only, features, hidden) = select_flow_features(inputs, extended, cfg)?;
    evaluate_selection(design, inputs, &flow_only, &features, hidden, with_aggregation, cfg)
}

/// The same design evaluated without and with the bundle features, sharing one RFE pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub without: ExperimentReport,
    pub with: ExperimentReport,
}

pub fn run_comparison(
    design: Design,
    inputs: &[(String, Vec<FlowFeatureVector>)],
    extended: bool,
    cfg: &ExperimentConfig,
) -> Result<Comparison> {
    check_design(design, inputs, extended)?;
    let (flow_only, features, hidden) = select_flow_features(inputs, extended, cfg)?;
    Ok(Comparison {
        without: evaluate_selection(design, inputs, &flow_only, &features, hidden, false, cfg)?,
        with: evaluate_selection(design, inputs, &flow_only, &features, hidden, true, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_formulas() {
        assert_eq!(recall(50, 50).value, 0.5);
        assert_eq!(precision(9, 1).value, 0.9);
        assert!((f1(50, 50, 0).value - 100.0 / 150.0).abs() < 1e-15);
        let undetected = recall(0, 0);
        assert!(undetected.undefined);
        assert_eq!(undetected.value, 0.0);
    }

    #[test]
    fn confusion_conservation() {
        let truth = [0, 0, 1, 2, 2, 2];
        let pred = [0, 1, 1, 0, 2, 2];
        let c = ConfusionCounts::from_predictions(&truth, &pred, 3);
        assert_eq!(c.total(), 6);
        assert_eq!(c.tp, vec![1, 1, 2]);
        assert_eq!(c.fp, vec![1, 1, 0]);
        assert_eq!(c.fn_, vec![1, 0, 1]);
    }

    #[test]
    fn folds_have_equal_size() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let folds = stratified_folds(&labels, &["a".into(), "b".into()], 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..103).map(|i| usize::from(i % 10 == 0)).collect();
        let folds = stratified_folds(&labels, &["a".into(), "b".into()], 5, 4).unwrap();
        for f in &folds {
            let minority = f.iter().filter(|&&i| labels[i] == 1).count();
            assert!((2..=3).contains(&minority), "fold has {minority} minority samples");
        }
    }

    #[test]
    fn too_few_samples_names_the_class() {
        let labels = [0, 0, 0, 0, 0, 1, 1];
        match stratified_folds(&labels, &["benign".into(), "rare".into()], 5, 0) {
            Err(Error::TooFewSamples {
                class,
                count: 2,
                folds: 5,
            }) => assert_eq!(class, "rare"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(stratified_folds(&labels, &["a".into(), "b".into()], 1, 0).is_err());
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 0.5]);
        assert_eq!((m.mean, m.std), (0.75, 0.25));
        assert_eq!(m.percent(), "75.00% ± 25.00%");
    }

    #[test]
    fn design_parsing() {
        assert_eq!("five_class".parse::<Design>().unwrap(), Design::FiveClass);
        assert!("six".parse::<Design>().is_err());
    }
}
