use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flowbundle::aggregation;
use flowbundle::capture::read_pcap;
use flowbundle::classifier::Classifier;
use flowbundle::dataset::Dataset;
use flowbundle::evaluation::{kfold_evaluate, run_experiment, ClassMetrics, ConfusionCounts, Design, MeanStd};
use flowbundle::features::{self, is_aggregation_feature, FlowFeatureVector, AGGREGATION_FEATURE_NAMES};
use flowbundle::nn::Activation;
use flowbundle::pipeline::{self, ReplicateConfig};
use flowbundle::rfe::{rfe_select, RfeOutcome};
use flowbundle::synth::{self, LabelManifest, ScenarioSpec};
use flowbundle::zeroday::{fit_benign, ThresholdResult, ZeroDayDetector};
use flowbundle::Error;

mod config;

use config::{Overrides, PipelineConfig};

/// Flow aggregation features for intrusion detection: capture, extract,
/// aggregate, select, train and evaluate.
#[derive(Parser, Debug)]
#[command(name = "flowbundle", version)]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled synthetic capture.
    Synth(SynthArgs),
    /// Read a pcap, assemble bidirectional flows and write their features as CSV.
    Extract(ExtractArgs),
    /// Fill the bundle features of a flow CSV.
    Aggregate(AggregateArgs),
    /// Recursive feature elimination over a labelled CSV.
    Rfe(RfeArgs),
    /// Train a classifier on a labelled CSV.
    Train(TrainArgs),
    /// Cross-validate a design, or score a trained model on a labelled CSV.
    Eval(EvalArgs),
    /// Fit or apply the autoencoder zero-day detector.
    #[command(subcommand)]
    Zeroday(ZeroDayCommand),
    /// Run the full synthetic study and print one consolidated report.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// mimicking, five_class or fig2
    #[arg(long, default_value = "mimicking")]
    scenario: String,
    /// A TOML scenario description used instead of a named preset.
    #[arg(long, value_name = "FILE", conflicts_with = "scenario")]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the ground-truth label manifest.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    pcap: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Label manifest; flows it does not list are labelled benign.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_name = "SECONDS")]
    idle_timeout: Option<f64>,
    /// Seconds, or `none` to disable.
    #[arg(long, value_name = "SECONDS")]
    active_timeout: Option<String>,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tumbling window length in seconds, or `none` for one bundle per initiator.
    #[arg(long)]
    window: Option<String>,
}

#[derive(Args, Debug)]
struct RfeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    step: Option<usize>,
    /// Leave num_flows and src_ports_delta out of the candidate set.
    #[arg(long)]
    exclude_aggregation: bool,
    /// Selection manifest (JSON) for `train` and `eval`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Debug, Default)]
struct TrainingFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// relu, tanh or sigmoid
    #[arg(long, value_parser = parse_activation)]
    activation: Option<Activation>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size; 0 trains on the full batch.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Selection manifest written by `rfe`.
    #[arg(long, value_name = "FILE", conflicts_with = "features")]
    selection: Option<PathBuf>,
    /// Explicit feature names, comma separated.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// binary, three_class or five_class
    #[arg(long, required_unless_present = "model")]
    design: Option<String>,
    #[arg(long, value_name = "CSV")]
    benign: Option<PathBuf>,
    /// Attack class as NAME=CSV; repeat once per class.
    #[arg(long, value_name = "NAME=CSV", value_parser = parse_attack)]
    attack: Vec<(String, PathBuf)>,
    /// Append num_flows and src_ports_delta to the selected features.
    #[arg(long)]
    with_aggregation: bool,
    /// Five-class only: more RFE-ranked features and a wider hidden layer.
    #[arg(long)]
    extended: bool,
    /// Use this selection manifest instead of running RFE.
    #[arg(long, value_name = "FILE")]
    selection: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    /// Score this trained model on `--in` instead of cross-validating.
    #[arg(long, conflicts_with_all = ["design", "benign", "attack", "selection"])]
    model: Option<PathBuf>,
    /// One labelled CSV instead of per-class files; classes come from its label column.
    #[arg(long = "in", conflicts_with_all = ["benign", "attack"])]
    input: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Subcommand, Debug)]
enum ZeroDayCommand {
    /// Fit the autoencoder and its scaler on benign rows.
    Fit {
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Train on the flow features only.
        #[arg(long)]
        exclude_aggregation: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a CSV against every threshold.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Write the consolidated report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_attack(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=CSV, got `{s}`")),
    }
}

impl TrainingFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            hidden: self.hidden.clone(),
            activation: self.activation,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            ..Overrides::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes a parent message already quotes.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

/// 2 for anything that failed to read or write a file, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let io = e
        .chain()
        .any(|c| c.downcast_ref::<std::io::Error>().is_some() || c.downcast_ref::<Error>().is_some_and(Error::is_io));
    if io {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth_cmd(&cfg, a),
        Command::Extract(a) => extract_cmd(&cfg, a),
        Command::Aggregate(a) => aggregate_cmd(&cfg, a),
        Command::Rfe(a) => rfe_cmd(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Zeroday(z) => zeroday_cmd(&cfg, z),
        Command::Replicate(a) => replicate_cmd(&cfg, a),
    }
}

fn synth_cmd(cfg: &PipelineConfig, a: SynthArgs) -> Result<()> {
    let seed = cfg.seed(&Overrides {
        seed: a.seed,
        ..Overrides::default()
    });
    let scenario = match (&a.spec, a.scenario.as_str()) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let mut spec: ScenarioSpec =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
            if a.seed.is_some() {
                spec.seed = seed;
            }
            synth::generate(&spec)?
        }
        (None, "fig2") => synth::fig2_replay(),
        (None, name) => synth::generate(&ScenarioSpec::preset(name, seed)?)?,
    };
    synth::write_pcap(&scenario.packets, &a.out)?;
    if let Some(labels) = &a.labels {
        scenario.labels.write_csv_file(labels)?;
    }
    eprintln!(
        "wrote {} packets, {} labelled flows to {}",
        scenario.packets.len(),
        scenario.labels.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn extract_cmd(cfg: &PipelineConfig, a: ExtractArgs) -> Result<()> {
    let timeouts = cfg.timeouts(&Overrides {
        idle_timeout: a.idle_timeout,
        active_timeout: a.active_timeout.clone(),
        ..Overrides::default()
    })?;
    let capture = read_pcap(&a.pcap)?;
    let labels = a.labels.as_ref().map(LabelManifest::read_csv_file).transpose()?;
    let extraction = pipeline::extract_capture(&capture, &timeouts, labels.as_ref());
    features::write_csv_file(&extraction.rows, &a.out)?;
    eprintln!(
        "{} packets ({} skipped) -> {} flows{}",
        capture.packets.len(),
        capture.skipped.total(),
        extraction.rows.len(),
        if labels.is_some() {
            format!(", {} without a manifest entry", extraction.unlabeled)
        } else {
            String::new()
        }
    );
    Ok(())
}

fn aggregate_cmd(cfg: &PipelineConfig, a: AggregateArgs) -> Result<()> {
    let window = cfg.window(&Overrides {
        window: a.window.clone(),
        ..Overrides::default()
    })?;
    let rows = features::read_csv_file(&a.input)?;
    let rows = aggregation::aggregate(rows, window)?;
    features::write_csv_file(&rows, &a.out)?;
    let bundles: BTreeSet<_> = rows.iter().map(|r| r.meta.initiator.ip).collect();
    eprintln!("{} flows from {} initiators", rows.len(), bundles.len());
    Ok(())
}

/// Flow rows as a dataset, including the bundle columns when every row carries them.
fn labelled_dataset(rows: &[FlowFeatureVector], exclude_aggregation: bool) -> Result<Dataset> {
    let aggregated = !rows.is_empty() && rows.iter().all(FlowFeatureVector::is_aggregated);
    Ok(Dataset::from_labeled_flows(rows, aggregated && !exclude_aggregation)?)
}

fn rfe_cmd(cfg: &PipelineConfig, a: RfeArgs) -> Result<()> {
    let mut o = a.training.overrides();
    o.k = a.k;
    o.step = a.step;
    let rfe = cfg.experiment(&o).rfe;
    let data = labelled_dataset(&features::read_csv_file(&a.input)?, a.exclude_aggregation)?;
    let outcome = rfe_select(&data, &rfe)?;
    for (rank, name) in outcome.selected.iter().enumerate() {
        println!("{:>2}. {name}", rank + 1);
    }
    if let Some(out) = &a.out {
        outcome.save(out)?;
    }
    Ok(())
}

fn feature_list(selection: Option<&Path>, explicit: Option<Vec<String>>, data: &Dataset) -> Result<Vec<String>> {
    Ok(match (selection, explicit) {
        (Some(path), _) => RfeOutcome::load(path)?.selected,
        (None, Some(names)) => names,
        (None, None) => data.feature_names.clone(),
    })
}

fn train_cmd(cfg: &PipelineConfig, a: TrainArgs) -> Result<()> {
    let spec = cfg.experiment(&a.training.overrides()).classifier;
    let data = labelled_dataset(&features::read_csv_file(&a.input)?, false)?;
    let names = feature_list(a.selection.as_deref(), a.features, &data)?;
    let data = data.select(&names)?;
    let (model, history) = Classifier::fit(&data, &spec)?;
    model.save(&a.model)?;
    eprintln!(
        "trained on {} rows, {} features, classes {:?}; final loss {:.6}",
        data.len(),
        names.len(),
        model.class_names,
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct ScoreReport {
    classes: Vec<ClassMetrics>,
    confusion: ConfusionCounts,
}

fn eval_cmd(cfg: &PipelineConfig, a: EvalArgs) -> Result<()> {
    if let Some(model_path) = &a.model {
        let input = a
            .input
            .as_ref()
            .ok_or_else(|| Error::Config("--model needs --in <labelled csv>".into()))?;
        return score_model(model_path, input, a.report.as_deref());
    }
    let design: Design = a.design.as_deref().unwrap_or_default().parse()?;
    let inputs = match (&a.input, &a.benign) {
        (Some(path), _) => group_by_label(features::read_csv_file(path)?),
        (None, Some(benign)) => {
            let mut inputs = vec![(features::DEFAULT_LABEL.to_string(), features::read_csv_file(benign)?)];
            for (name, path) in &a.attack {
                inputs.push((name.clone(), features::read_csv_file(path)?));
            }
            inputs
        }
        (None, None) => {
            return Err(Error::Config("cross-validation needs --in <labelled csv> or --benign <csv>".into()).into())
        }
    };
    let mut o = a.training.overrides();
    o.folds = a.folds;
    let exp = cfg.experiment(&o);

    let report = match &a.selection {
        None => run_experiment(design, &inputs, a.with_aggregation, a.extended, &exp)?,
        Some(path) => {
            let mut names: Vec<String> = RfeOutcome::load(path)?
                .selected
                .into_iter()
                .filter(|n| !is_aggregation_feature(n))
                .collect();
            if a.with_aggregation {
                names.extend(AGGREGATION_FEATURE_NAMES.iter().map(|s| s.to_string()));
            }
            let data = Dataset::from_classes(&inputs, a.with_aggregation)?.select(&names)?;
            let mut r = kfold_evaluate(&data, exp.folds, &exp.classifier, exp.seed)?;
            r.design = design.name().to_string();
            r.with_aggregation = a.with_aggregation;
            r
        }
    };
    print!("{}", report.to_table());
    write_report(a.report.as_deref(), &report)
}

/// Rows grouped by label, benign first and the rest alphabetical.
fn group_by_label(rows: Vec<FlowFeatureVector>) -> Vec<(String, Vec<FlowFeatureVector>)> {
    let mut groups: BTreeMap<String, Vec<FlowFeatureVector>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.meta.label.clone()).or_default().push(r);
    }
    let benign = groups.remove(features::DEFAULT_LABEL);
    benign
        .map(|b| (features::DEFAULT_LABEL.to_string(), b))
        .into_iter()
        .chain(groups)
        .collect()
}

fn score_model(model_path: &Path, input: &Path, report: Option<&Path>) -> Result<()> {
    let model = Classifier::load(model_path)?;
    let rows = features::read_csv_file(input)?;
    let data = labelled_dataset(&rows, false)?.select(&model.feature_names)?;
    let truth: Vec<usize> = data
        .labels
        .iter()
        .map(|&l| {
            let name = &data.class_names[l];
            model.class_names.iter().position(|c| c == name).ok_or_else(|| {
                Error::Schema(format!(
                    "label `{name}` is not one of the model's classes {:?}",
                    model.class_names
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let predicted = data
        .rows
        .iter()
        .map(|r| model.predict(r))
        .collect::<Result<Vec<_>, _>>()?;
    let confusion = ConfusionCounts::from_predictions(&truth, &predicted, model.class_names.len());
    let point = |v: f64| MeanStd { mean: v, std: 0.0 };
    let classes: Vec<ClassMetrics> = model
        .class_names
        .iter()
        .enumerate()
        .map(|(c, name)| ClassMetrics {
            class: name.clone(),
            precision: point(confusion.precision(c).value),
            recall: point(confusion.recall(c).value),
            f1: point(confusion.f1(c).value),
        })
        .collect();
    println!("{:<14} {:>10} {:>10} {:>10}", "class", "precision", "recall", "f1");
    for c in &classes {
        println!(
            "{:<14} {:>9.2}% {:>9.2}% {:>9.2}%",
            c.class,
            c.precision.mean * 100.0,
            c.recall.mean * 100.0,
            c.f1.mean * 100.0
        );
    }
    write_report(report, &ScoreReport { classes, confusion })
}

fn zeroday_cmd(cfg: &PipelineConfig, z: ZeroDayCommand) -> Result<()> {
    match z {
        ZeroDayCommand::Fit {
            benign,
            model,
            exclude_aggregation,
            seed,
        } => {
            let ae = cfg.autoencoder(&Overrides {
                seed,
                ..Overrides::default()
            });
            let all = features::read_csv_file(&benign)?;
            let total = all.len();
            let rows: Vec<FlowFeatureVector> = all
                .into_iter()
                .filter(|r| r.meta.label == features::DEFAULT_LABEL)
                .collect();
            if rows.len() < total {
                eprintln!(
                    "ignoring {} rows not labelled {}",
                    total - rows.len(),
                    features::DEFAULT_LABEL
                );
            }
            let aggregated = !rows.is_empty() && rows.iter().all(FlowFeatureVector::is_aggregated);
            let with = aggregated && !exclude_aggregation;
            let data = Dataset::from_classes(&[(features::DEFAULT_LABEL.to_string(), rows)], with)?;
            let detector = fit_benign(&data.feature_names, &data.rows, &ae)?;
            detector.save(&model)?;
            eprintln!(
                "fitted on {} benign rows with {} features",
                data.len(),
                data.num_features()
            );
            Ok(())
        }
        ZeroDayCommand::Detect {
            model,
            input,
            thresholds,
            report,
        } => {
            let policy = cfg.thresholds(&Overrides {
                thresholds,
                ..Overrides::default()
            })?;
            let detector = ZeroDayDetector::load(&model)?;
            let rows = features::read_csv_file(&input)?;
            let with = detector.feature_names.iter().any(|n| is_aggregation_feature(n));
            let data =
                Dataset::from_classes(&[("samples".to_string(), rows)], with)?.select(&detector.feature_names)?;
            let results = detector.detect_named(&data.feature_names, &data.rows, &policy)?;
            print_thresholds(&results);
            write_report(report.as_deref(), &results)
        }
    }
}

fn print_thresholds(results: &[ThresholdResult]) {
    println!(
        "{:>9} {:>8} {:>8} {:>16} {:>16}",
        "threshold", "flagged", "total", "attack accuracy", "benign accuracy"
    );
    for r in results {
        println!(
            "{:>9.2} {:>8} {:>8} {:>15.2}% {:>15.2}%",
            r.threshold,
            r.flagged,
            r.total,
            r.attack_accuracy * 100.0,
            r.benign_accuracy * 100.0
        );
    }
}

fn replicate_cmd(cfg: &PipelineConfig, a: ReplicateArgs) -> Result<()> {
    let o = Overrides {
        seed: a.seed,
        ..Overrides::default()
    };
    let rc = ReplicateConfig {
        seed: cfg.seed(&o),
        timeouts: cfg.timeouts(&o)?,
        window: cfg.window(&o)?,
        experiment: cfg.experiment(&o),
        autoencoder: cfg.autoencoder(&o),
        thresholds: cfg.thresholds(&o)?,
    };
    let report = pipeline::replicate(&rc)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_json()).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

fn write_report<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(path) = path {
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
