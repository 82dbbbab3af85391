//! Pipeline commands behind the `ntc` binary: ingest, augment, train, eval,
//! compare. Every command is deterministic given its config and seeds;
//! machine-readable outputs carry no timestamps.

pub mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ntc_core::augment::{oversample, run_plan, write_generators_archive, AugmentationPlan};
use ntc_core::classifier::{
    train, ClassifierModel, InputMode, InputWidth, Prediction, TrainReport,
};
use ntc_core::eval::{compare_runs, confusion, metrics, ClassMetrics};
use ntc_core::fs_embedding::{EncodedFlow, FsEncoder, OneHotEncoder};
use ntc_core::ingest::{class_stats, load_dataset, split, write_dataset, Dataset, FileFormat};
use ntc_core::report::{comparison_report, metrics_report, parse_metrics_report, Report};
use ntc_core::synth::{synth_dataset, SynthSpec};
use ntc_nn::Archive;

use config::RunConfig;

/// Exit code classification: usage/config problems exit 2, internal
/// failures exit 1.
#[derive(Debug)]
pub struct CliError {
    pub usage: bool,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError {
            usage: true,
            message,
        }
    }

    pub fn internal(message: String) -> Self {
        CliError {
            usage: false,
            message,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.usage {
            2
        } else {
            1
        }
    }
}

#[derive(Parser)]
#[command(name = "ntc", about = "Balance imbalanced flow datasets and classify them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugmentMode {
    /// LSTM sequence tracks + KDE numerics.
    LstmKde,
    /// Random duplication with replacement.
    Oversample,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputModeArg {
    Fs,
    Onehot,
}

impl InputModeArg {
    fn to_mode(self) -> InputMode {
        match self {
            InputModeArg::Fs => InputMode::FsEmbedding,
            InputModeArg::Onehot => InputMode::OneHot,
        }
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Load (or synthesize) a dataset, print class statistics, cache it.
    Ingest {
        /// Flow-record file to load.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Input format: csv or jsonl.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Synthetic dataset spec (TOML) to generate instead of loading.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Generation seed (required with --synthetic).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: current directory).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Split the configured dataset and rebalance the training side.
    Augment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "lstm-kde")]
        mode: AugmentMode,
        /// Plan file override (defaults to the config's augment.plan).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Train the classifier on a prepared training file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Input encoding override.
        #[arg(long, value_enum)]
        input_mode: Option<InputModeArg>,
        /// Training data (default: the augmented split if present, else the
        /// plain training split).
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Tag recorded in reports (default: derived from mode and data).
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Evaluate a trained model on a test file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Write the machine-readable metrics report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine evaluation reports into a comparison table.
    Compare {
        /// Two or more metrics reports.
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            input,
            format,
            synthetic,
            seed,
            out,
        } => cmd_ingest(input, &format, synthetic, seed, &out),
        Command::Augment { config, mode, plan } => cmd_augment(&config, mode, plan),
        Command::Train {
            config,
            input_mode,
            train_data,
            scheme,
        } => cmd_train(&config, input_mode, train_data, scheme),
        Command::Eval {
            model,
            test,
            format,
            out,
        } => cmd_eval(&model, &test, &format, out),
        Command::Compare { reports, out } => cmd_compare(&reports, out),
    }
}

fn parse_format(s: &str) -> Result<FileFormat, CliError> {
    FileFormat::parse(s)
        .ok_or_else(|| CliError::usage(format!("unknown format `{s}` (use csv or jsonl)")))
}

fn ensure_layout(out: &Path) -> Result<(PathBuf, PathBuf, PathBuf), CliError> {
    let datasets = out.join("datasets");
    let models = out.join("models");
    let reports = out.join("reports");
    for dir in [&datasets, &models, &reports] {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok((datasets, models, reports))
}

fn print_class_table(ds: &Dataset) {
    let stats = class_stats(ds).expect("dataset is nonempty");
    println!("{:<5} {:<20} {:>10} {:>9}", "id", "class", "flows", "share");
    for label in &ds.labels {
        println!(
            "{:<5} {:<20} {:>10} {:>8.2}%",
            label.id.0,
            label.name,
            stats.counts[label.id.0],
            100.0 * stats.fractions[label.id.0]
        );
    }
    println!("total {}", ds.flows.len());
}

fn cmd_ingest(
    input: Option<PathBuf>,
    format: &str,
    synthetic: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let (datasets, _, _) = ensure_layout(out)?;
    let ds = match (input, synthetic) {
        (Some(path), None) => {
            let fmt = parse_format(format)?;
            let (ds, report) = load_dataset(&path, fmt)
                .map_err(|e| CliError::usage(format!("{e}")))?;
            if report.rows_rejected > 0 || report.flows_rejected > 0 {
                println!(
                    "rejected {} rows / {} flows ({} reversed first packets)",
                    report.rows_rejected, report.flows_rejected, report.first_packet_rejects
                );
                for e in &report.errors {
                    println!("  {e}");
                }
            }
            ds
        }
        (None, Some(spec_path)) => {
            let seed = seed.ok_or_else(|| {
                CliError::usage("--synthetic requires --seed".to_string())
            })?;
            let spec = SynthSpec::from_path(&spec_path)
                .map_err(|e| CliError::usage(format!("{e}")))?;
            synth_dataset(&spec, seed).map_err(|e| CliError::usage(format!("{e}")))?
        }
        (None, None) => {
            return Err(CliError::usage(
                "ingest needs --input or --synthetic".to_string(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap forbids the combination"),
    };
    print_class_table(&ds);
    let cache = datasets.join("dataset.csv");
    write_dataset(&ds, &cache, FileFormat::Csv)
        .map_err(|e| CliError::internal(format!("{e}")))?;
    println!("cached dataset at {}", cache.display());
    Ok(())
}

/// Loads the dataset a config points at (file or synthetic spec).
fn config_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    if let Some(input) = &cfg.dataset.input {
        let (ds, _) = load_dataset(input, cfg.dataset_format())
            .map_err(|e| CliError::usage(format!("{e}")))?;
        Ok(ds)
    } else {
        let spec_path = cfg.dataset.synthetic.as_ref().expect("validated");
        let spec = SynthSpec::from_path(spec_path).map_err(|e| CliError::usage(format!("{e}")))?;
        synth_dataset(&spec, cfg.dataset.seed.expect("validated"))
            .map_err(|e| CliError::usage(format!("{e}")))
    }
}

fn cmd_augment(config: &Path, mode: AugmentMode, plan: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let (datasets, models, _) = ensure_layout(&cfg.output_dir)?;

    let ds = config_dataset(&cfg)?;
    let (train_ds, test_ds) = split(&ds, cfg.split.train_fraction, cfg.split.seed)
        .map_err(|e| CliError::usage(format!("{e}")))?;
    write_dataset(&train_ds, &datasets.join("train.csv"), FileFormat::Csv)
        .map_err(|e| CliError::internal(format!("{e}")))?;
    write_dataset(&test_ds, &datasets.join("test.csv"), FileFormat::Csv)
        .map_err(|e| CliError::internal(format!("{e}")))?;
    println!(
        "split {} flows into {} train / {} test",
        ds.flows.len(),
        train_ds.flows.len(),
        test_ds.flows.len()
    );

    let plan_path = plan
        .or_else(|| cfg.augment.as_ref().map(|a| a.plan.clone()))
        .ok_or_else(|| CliError::usage("augment needs a plan (config or --plan)".to_string()))?;
    let plan_text = std::fs::read_to_string(&plan_path)
        .map_err(|e| CliError::usage(format!("cannot read plan {}: {e}", plan_path.display())))?;
    let plan = AugmentationPlan::from_toml_str(&plan_text, &train_ds)
        .map_err(|e| CliError::usage(format!("{e}")))?;

    match mode {
        AugmentMode::LstmKde => {
            let gen_cfg = cfg.generator_config(plan.seed);
            let outcome =
                run_plan(&train_ds, &plan, &gen_cfg).map_err(|e| CliError::internal(format!("{e}")))?;
            for (class, added) in &outcome.added_per_class {
                println!(
                    "class {}: +{} generated flows",
                    train_ds.label_name(*class),
                    added
                );
            }
            write_dataset(
                &outcome.dataset,
                &datasets.join("train_augmented.csv"),
                FileFormat::Csv,
            )
            .map_err(|e| CliError::internal(format!("{e}")))?;
            let mut archive = Archive::new();
            write_generators_archive(&outcome.generators, &mut archive);
            let gen_path = models.join("generators.bin");
            archive
                .save(&gen_path)
                .map_err(|e| CliError::internal(format!("{e}")))?;
            println!(
                "wrote {} and {}",
                datasets.join("train_augmented.csv").display(),
                gen_path.display()
            );
        }
        AugmentMode::Oversample => {
            let balanced =
                oversample(&train_ds, &plan).map_err(|e| CliError::internal(format!("{e}")))?;
            println!(
                "oversampled {} additional flows",
                balanced.flows.len() - train_ds.flows.len()
            );
            write_dataset(
                &balanced,
                &datasets.join("train_oversampled.csv"),
                FileFormat::Csv,
            )
            .map_err(|e| CliError::internal(format!("{e}")))?;
            println!("wrote {}", datasets.join("train_oversampled.csv").display());
        }
    }
    Ok(())
}

/// Serialized encoder state stored in the classifier bundle.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderKind {
    Fs(FsEncoder),
    Onehot(OneHotEncoder),
}

impl EncoderKind {
    pub fn encode(&self, flow: &ntc_core::FlowRecord) -> EncodedFlow {
        match self {
            EncoderKind::Fs(e) => e.encode(flow),
            EncoderKind::Onehot(e) => e.encode(flow),
        }
    }

    fn rebuild_indexes(&mut self) {
        match self {
            EncoderKind::Fs(e) => e.rebuild_indexes(),
            EncoderKind::Onehot(e) => e.rebuild_indexes(),
        }
    }
}

/// Everything needed to evaluate a trained model later.
pub struct Bundle {
    pub model: ClassifierModel,
    pub encoder: EncoderKind,
    pub class_names: Vec<String>,
    pub scheme: String,
}

pub fn save_bundle(bundle: &Bundle, path: &Path) -> Result<(), CliError> {
    let mut archive = Archive::new();
    bundle.model.write_archive(&mut archive, "model");
    archive.insert_bytes(
        "encoder.json",
        serde_json::to_vec(&bundle.encoder)
            .map_err(|e| CliError::internal(format!("encoder serialization: {e}")))?,
    );
    archive.insert_bytes(
        "labels.json",
        serde_json::to_vec(&bundle.class_names)
            .map_err(|e| CliError::internal(format!("label serialization: {e}")))?,
    );
    archive.insert_bytes("scheme", bundle.scheme.clone().into_bytes());
    archive
        .save(path)
        .map_err(|e| CliError::internal(format!("{e}")))
}

pub fn load_bundle(path: &Path) -> Result<Bundle, CliError> {
    let archive = Archive::load(path).map_err(|e| CliError::usage(format!("{e}")))?;
    let model = ClassifierModel::read_archive(&archive, "model")
        .map_err(|e| CliError::usage(format!("{e}")))?;
    let mut encoder: EncoderKind = serde_json::from_slice(
        archive
            .bytes("encoder.json")
            .map_err(|e| CliError::usage(format!("{e}")))?,
    )
    .map_err(|e| CliError::usage(format!("corrupt encoder: {e}")))?;
    encoder.rebuild_indexes();
    let class_names: Vec<String> = serde_json::from_slice(
        archive
            .bytes("labels.json")
            .map_err(|e| CliError::usage(format!("{e}")))?,
    )
    .map_err(|e| CliError::usage(format!("corrupt labels: {e}")))?;
    let scheme = String::from_utf8(
        archive
            .bytes("scheme")
            .map_err(|e| CliError::usage(format!("{e}")))?
            .to_vec(),
    )
    .map_err(|e| CliError::usage(format!("corrupt scheme: {e}")))?;
    Ok(Bundle {
        model,
        encoder,
        class_names,
        scheme,
    })
}

fn cmd_train(
    config: &Path,
    input_mode: Option<InputModeArg>,
    train_data: Option<PathBuf>,
    scheme: Option<String>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let (datasets, models, reports) = ensure_layout(&cfg.output_dir)?;
    let ccfg = cfg.classifier_config(input_mode.map(InputModeArg::to_mode))?;

    let data_path = match train_data {
        Some(p) => p,
        None => {
            let augmented = datasets.join("train_augmented.csv");
            let plain = datasets.join("train.csv");
            if augmented.exists() {
                augmented
            } else if plain.exists() {
                plain
            } else {
                return Err(CliError::usage(format!(
                    "no training data found under {}; run `augment` first or pass --train-data",
                    datasets.display()
                )));
            }
        }
    };
    let (train_ds, _) = load_dataset(&data_path, FileFormat::Csv)
        .map_err(|e| CliError::usage(format!("{e}")))?;
    let stats = class_stats(&train_ds).map_err(|e| CliError::usage(format!("{e}")))?;

    let mode_tag = match ccfg.input_mode {
        InputMode::FsEmbedding => "fs",
        InputMode::OneHot => "onehot",
    };
    let stem = data_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("data");
    let scheme = scheme.unwrap_or_else(|| format!("{mode_tag}-{stem}"));

    let (encoder, width) = match ccfg.input_mode {
        InputMode::FsEmbedding => {
            let enc = FsEncoder::fit(&train_ds, &stats)
                .map_err(|e| CliError::internal(format!("{e}")))?;
            let width = InputWidth::Vocab(enc.vocab.len());
            (EncoderKind::Fs(enc), width)
        }
        InputMode::OneHot => {
            let enc = OneHotEncoder::fit(&train_ds, &stats, cfg.classifier.onehot_port_cap)
                .map_err(|e| CliError::internal(format!("{e}")))?;
            let width = InputWidth::PortCap(enc.ports.cap());
            (EncoderKind::Onehot(enc), width)
        }
    };

    let flows: Vec<EncodedFlow> = train_ds.flows.iter().map(|f| encoder.encode(f)).collect();
    let labels: Vec<usize> = train_ds.flows.iter().map(|f| f.label.0).collect();

    let mut model = ClassifierModel::build(&ccfg, width, train_ds.class_count())
        .map_err(|e| CliError::usage(format!("{e}")))?;
    println!(
        "training `{scheme}`: {} flows, {} classes, {} parameters",
        flows.len(),
        train_ds.class_count(),
        model.param_count()
    );
    let report = train(&mut model, &flows, &labels)
        .map_err(|e| CliError::internal(format!("{e}")))?;
    println!(
        "finished {} epochs in {:.1}s; final train loss {:.4}, accuracy {:.2}%",
        report.epochs_run,
        report.wall_clock_secs,
        report.epoch_loss.last().unwrap(),
        100.0 * report.epoch_accuracy.last().unwrap()
    );

    let bundle = Bundle {
        model,
        encoder,
        class_names: train_ds.labels.iter().map(|l| l.name.clone()).collect(),
        scheme: scheme.clone(),
    };
    let model_path = models.join(format!("classifier_{scheme}.bin"));
    save_bundle(&bundle, &model_path)?;

    let train_report = render_train_report(&scheme, &report);
    let report_path = reports.join(format!("train_{scheme}.rep"));
    train_report
        .save(&report_path)
        .map_err(|e| CliError::internal(format!("{e}")))?;
    println!("wrote {} and {}", model_path.display(), report_path.display());
    Ok(())
}

/// Train report lines: per-epoch loss/accuracy plus totals. Wall-clock is
/// deliberately absent so reruns are byte-identical.
fn render_train_report(scheme: &str, report: &TrainReport) -> Report {
    let mut r = Report::new();
    r.push("report.kind", "train");
    r.push("report.version", 1);
    r.push("scheme", scheme);
    r.push("params", report.param_count);
    r.push("epochs", report.epochs_run);
    for (e, (loss, acc)) in report
        .epoch_loss
        .iter()
        .zip(report.epoch_accuracy.iter())
        .enumerate()
    {
        r.push(&format!("epoch.{e}.loss"), loss);
        r.push(&format!("epoch.{e}.accuracy"), acc);
    }
    r
}

fn cmd_eval(
    model_path: &Path,
    test_path: &Path,
    format: &str,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let bundle = load_bundle(model_path)?;
    let fmt = parse_format(format)?;
    let (test_ds, _) = load_dataset(test_path, fmt).map_err(|e| CliError::usage(format!("{e}")))?;

    // Test labels map by name onto the training label table.
    let name_to_id: HashMap<&str, usize> = bundle
        .class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut truth = Vec::with_capacity(test_ds.flows.len());
    for flow in &test_ds.flows {
        let name = test_ds.label_name(flow.label);
        let id = name_to_id.get(name).ok_or_else(|| {
            CliError::usage(format!("test class `{name}` was not seen in training"))
        })?;
        truth.push(*id);
    }

    let encoded: Vec<EncodedFlow> = test_ds.flows.iter().map(|f| bundle.encoder.encode(f)).collect();
    let predictions: Vec<Prediction> = bundle
        .model
        .predict(&encoded)
        .map_err(|e| CliError::internal(format!("{e}")))?;
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label).collect();

    let k = bundle.class_names.len();
    let cm = confusion(&truth, &predicted, k).map_err(|e| CliError::internal(format!("{e}")))?;
    let m = metrics(&cm);
    print_metrics(&bundle.class_names, &m);

    let report = metrics_report(
        &bundle.scheme,
        bundle.model.param_count(),
        bundle.model.cfg.epochs,
        &bundle.class_names,
        &m,
    );
    if let Some(out) = out {
        report
            .save(&out)
            .map_err(|e| CliError::internal(format!("{e}")))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn print_metrics(names: &[String], m: &ClassMetrics) {
    println!("{:<5} {:<20} {:>9} {:>9} {:>6}", "id", "class", "precision", "recall", "F1");
    for (i, pc) in m.per_class.iter().enumerate() {
        println!(
            "{:<5} {:<20} {:>9.2} {:>9.2} {:>6.2}",
            i,
            names.get(i).map(String::as_str).unwrap_or("?"),
            pc.precision,
            pc.recall,
            pc.f1
        );
    }
    println!("accuracy {:.2}%  macro-F1 {:.4}", 100.0 * m.accuracy, m.macro_f1);
}

fn cmd_compare(report_paths: &[PathBuf], out: Option<PathBuf>) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in report_paths {
        let report = Report::load(path).map_err(|e| CliError::usage(format!("{e}")))?;
        let parsed = parse_metrics_report(&report)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        rows.push(parsed);
    }
    let table = compare_runs(&rows).map_err(|e| CliError::usage(format!("{e}")))?;
    print!("{}", table.render_text());
    if let Some(out) = out {
        comparison_report(&table)
            .save(&out)
            .map_err(|e| CliError::internal(format!("{e}")))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
