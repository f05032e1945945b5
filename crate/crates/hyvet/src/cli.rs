//! The `hyvet` command-line interface: argument registry, subcommand
//! drivers, and the exit-code contract.
//!
//! Exit codes: 0 success, 1 configuration problem (bad key, bad flag
//! value, invalid hyperparameters), 2 data problem (missing or malformed
//! files, inconsistent dataset, missing labels/timestamps), 3 numeric
//! failure (the loss left the finite range). All subcommand randomness
//! descends from one `--seed` via stable sub-seeding, so reruns with the
//! same inputs reproduce every artifact byte-for-byte — the lone
//! exception is the wall-clock `seconds` column of `history.csv`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{key_table, AppConfig, ConfigError};
use crate::data::{load_dataset, time_window, write_dataset, DataError};
use crate::eval::{
    case_study_stats, compute_metrics, export_embeddings, EvalError, MetricsReport,
};
use crate::hypergraph::Hypergraph;
use crate::model::{AblationMode, ModelError, ModelParams};
use crate::synth::{generate_synthetic, SynthError};
use crate::tensor::Tensor;
use crate::train::{
    kfold_cv_parallel, prepare, score, split_edges, train_with_mode, write_run_artifacts,
    PreparedData, Split, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Usage(String),
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn model_exit_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Autodiff(crate::autodiff::AutodiffError::NonFinite { .. }) => 3,
        ModelError::Autodiff(_) | ModelError::ShapeMismatch { .. } => 1,
        ModelError::Io { .. } | ModelError::Parse { .. } => 2,
    }
}

fn train_exit_code(e: &TrainError) -> i32 {
    match e {
        TrainError::NonFiniteLoss { .. } => 3,
        TrainError::InvalidConfig(_) => 1,
        TrainError::TooFewEdges(_) | TrainError::MissingLabels | TrainError::Io { .. } => 2,
        TrainError::Model(m) => model_exit_code(m),
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Synth(_) | CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Model(m) => model_exit_code(m),
            CliError::Train(t) => train_exit_code(t),
            CliError::Eval(e) => match e {
                EvalError::Train(t) => train_exit_code(t),
                EvalError::MissingLabels => 2,
                EvalError::Io { .. } => 2,
                _ => 1,
            },
        }
    }
}

fn config_key_help() -> String {
    let mut out = String::from(
        "Configuration keys (set in a --config file or via --set KEY=VALUE):\n",
    );
    let width = key_table().iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    for (key, default, help) in key_table() {
        let shown = if default.is_empty() { "(inherit)" } else { default };
        out.push_str(&format!("  {key:<width$}  {help} [default: {shown}]\n"));
    }
    out
}

/// Fake-news detection over attributed user/news hypergraphs.
#[derive(Parser)]
#[command(name = "hyvet", version, after_help = config_key_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train the full model; write run artifacts and held-out test metrics.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation of the full model.
    Cv(CvArgs),
    /// Cross-validate channel ablations and print a comparison table.
    Ablate(AblateArgs),
    /// Generate the planted synthetic dataset and write it to disk.
    GenSynth(GenSynthArgs),
    /// Train once, then evaluate on time-windowed copies of the data.
    EarlyDetect(EarlyDetectArgs),
    /// Per-class spreading statistics and data-quality warnings.
    Analyze(AnalyzeArgs),
    /// Write the fused per-edge embeddings of a trained model to CSV.
    ExportEmbeddings(ExportEmbeddingsArgs),
}

/// Options every subcommand understands.
#[derive(Args)]
pub struct ConfigArgs {
    /// key=value configuration file (see the key list under --help).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.alpha=0.25.
    #[arg(long, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed; overrides train.seed and synth.seed together.
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset manifest; omitted, the planted synthetic dataset
    /// (synth.* keys) is generated in memory.
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Directory for config.txt, history.csv, params.ckpt, metrics.csv.
    #[arg(long, value_name = "DIR", default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset manifest; omitted, the planted synthetic dataset
    /// (synth.* keys) is generated in memory.
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Number of folds; overrides train.folds.
    #[arg(long, value_name = "K")]
    pub folds: Option<usize>,
    /// Worker threads for folds (results are identical at any value).
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Directory for metrics.csv.
    #[arg(long, value_name = "DIR", default_value = "runs/cv")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset manifest; omitted, the planted synthetic dataset
    /// (synth.* keys) is generated in memory.
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// One of full, concat_no_mi, sem_only, cre_only — or "all".
    #[arg(long, default_value = "all")]
    pub mode: String,
    /// Worker threads for folds (results are identical at any value).
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Directory for ablation.csv.
    #[arg(long, value_name = "DIR", default_value = "runs/ablate")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Directory for the nodes/edges/manifest files and credibility.tsv.
    #[arg(long, value_name = "DIR", default_value = "runs/synth")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EarlyDetectArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset manifest; omitted, the planted synthetic dataset
    /// (synth.* keys) is generated in memory. Timestamps are required.
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Comma-separated cutoffs, integers with an s/m/h/d suffix.
    #[arg(long, default_value = "2h,4h,8h,16h,24h,36h,48h,72h")]
    pub cutoffs: String,
    /// Directory for early_detect.csv.
    #[arg(long, value_name = "DIR", default_value = "runs/early-detect")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset manifest to analyze; omitted, the planted synthetic
    /// dataset (synth.* keys) is generated in memory.
    #[arg(long, value_name = "MANIFEST")]
    pub dataset: Option<PathBuf>,
    /// Directory for analysis.csv.
    #[arg(long, value_name = "DIR", default_value = "runs/analyze")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExportEmbeddingsArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset manifest; omitted, the planted synthetic dataset
    /// (synth.* keys) is generated in memory.
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Trained checkpoint to export from; omitted, a model is trained
    /// first with the current configuration.
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long, value_name = "FILE", default_value = "runs/embeddings.csv")]
    pub out: PathBuf,
}

/// Parses one cutoff like `2h`, `30m`, `45s`, or `1d` into seconds.
pub fn parse_cutoff(token: &str) -> Result<f64, CliError> {
    let token = token.trim();
    let err = || {
        CliError::Usage(format!(
            "bad cutoff '{token}': expected an integer with an s/m/h/d suffix, e.g. 2h"
        ))
    };
    if token.len() < 2 {
        return Err(err());
    }
    let (digits, suffix) = token.split_at(token.len() - 1);
    let scale = match suffix {
        "s" => 1.0,
        "m" => 60.0,
        "h" => 3600.0,
        "d" => 86400.0,
        _ => return Err(err()),
    };
    let n: u64 = digits.parse().map_err(|_| err())?;
    Ok(n as f64 * scale)
}

/// Parses a comma-separated cutoff list, keeping the given order.
pub fn parse_cutoffs(spec: &str) -> Result<Vec<(String, f64)>, CliError> {
    spec.split(',')
        .map(|tok| parse_cutoff(tok).map(|secs| (tok.trim().to_owned(), secs)))
        .collect()
}

struct ResolvedData {
    hypergraph: Hypergraph,
    edge_ids: Vec<String>,
    embeddings: Option<Tensor>,
}

fn load_config(args: &ConfigArgs) -> Result<AppConfig, CliError> {
    let mut config = AppConfig::load(args.config.as_deref(), &args.set)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
        config.synth.seed = seed;
    }
    Ok(config)
}

fn resolve_dataset(
    manifest: Option<&Path>,
    config: &AppConfig,
) -> Result<ResolvedData, CliError> {
    match manifest {
        Some(path) => {
            let loaded = load_dataset(path)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            Ok(ResolvedData {
                hypergraph: loaded.hypergraph,
                edge_ids: loaded.edge_ids,
                embeddings: loaded.embeddings,
            })
        }
        None => {
            let data = generate_synthetic(&config.synth)?;
            Ok(ResolvedData {
                hypergraph: data.hypergraph,
                edge_ids: data.edge_ids,
                embeddings: None,
            })
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    }
    std::fs::write(path, contents)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// Test metrics of trained parameters on the held-out split.
fn test_metrics(
    prep: &PreparedData,
    params: &ModelParams,
    config: &AppConfig,
    split: &Split,
) -> Result<MetricsReport, CliError> {
    let outputs = score(prep, params, &config.train, AblationMode::Full, &split.train)?;
    let preds: Vec<u8> = split.test.iter().map(|&e| outputs.predictions[e]).collect();
    let truth: Vec<u8> = split.test.iter().map(|&e| prep.labels[e]).collect();
    Ok(compute_metrics(&preds, &truth)?)
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let data = resolve_dataset(args.manifest.as_deref(), &config)?;
    let (params, history) = train_with_mode(
        &data.hypergraph,
        data.embeddings.as_ref(),
        &config.train,
        AblationMode::Full,
    )?;
    write_run_artifacts(&args.out, &config.train, &params, &history)?;

    let prep = prepare(&data.hypergraph, data.embeddings.as_ref(), &config.train)?;
    let split = split_edges(&prep.labels, config.train.ratios, config.train.seed)?;
    let report = test_metrics(&prep, &params, &config, &split)?;
    write_file(&args.out.join("metrics.csv"), &report.to_csv())?;

    println!("{}", report.table());
    println!("test accuracy: {:.4}", report.accuracy.mean);
    println!("artifacts: {}", args.out.display());
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.common)?;
    if let Some(folds) = args.folds {
        config.train.folds = folds;
        config.validate()?;
    }
    let data = resolve_dataset(args.manifest.as_deref(), &config)?;
    let report = kfold_cv_parallel(
        &data.hypergraph,
        data.embeddings.as_ref(),
        &config.train,
        AblationMode::Full,
        args.jobs,
    )?;
    write_file(&args.out.join("metrics.csv"), &report.to_csv())?;
    println!("{}-fold cross-validation", config.train.folds);
    println!("{}", report.table());
    Ok(())
}

/// One ablation row, formatted identically whether it was produced by a
/// single-mode run or by `--mode all`.
fn ablation_row(mode: AblationMode, report: &MetricsReport) -> String {
    format!(
        "{:<14} {} {} {} {} {}",
        mode.name(),
        report.accuracy.mean,
        report.accuracy.std,
        report.precision.mean,
        report.recall.mean,
        report.f1.mean
    )
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let modes: Vec<AblationMode> = if args.mode == "all" {
        AblationMode::ALL.to_vec()
    } else {
        vec![AblationMode::parse(&args.mode).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown ablation mode '{}': expected full, concat_no_mi, sem_only, cre_only, or all",
                args.mode
            ))
        })?]
    };
    let data = resolve_dataset(args.manifest.as_deref(), &config)?;
    let mut table = String::from("mode           acc_mean acc_std precision recall f1\n");
    let mut csv = String::from("mode,acc_mean,acc_std,precision_mean,recall_mean,f1_mean\n");
    for &mode in &modes {
        let report = kfold_cv_parallel(
            &data.hypergraph,
            data.embeddings.as_ref(),
            &config.train,
            mode,
            args.jobs,
        )?;
        table.push_str(&ablation_row(mode, &report));
        table.push('\n');
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            mode.name(),
            report.accuracy.mean,
            report.accuracy.std,
            report.precision.mean,
            report.recall.mean,
            report.f1.mean
        ));
    }
    write_file(&args.out.join("ablation.csv"), &csv)?;
    print!("{table}");
    Ok(())
}

fn cmd_gen_synth(args: &GenSynthArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let data = generate_synthetic(&config.synth)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|source| CliError::Io { path: args.out.display().to_string(), source })?;
    let manifest =
        write_dataset(&data.hypergraph, &data.user_ids, &data.edge_ids, &args.out, "synth")?;

    let mut credibility = String::new();
    for (id, &unc) in data.user_ids.iter().zip(&data.uncredible) {
        credibility.push_str(&format!("{id}\t{}\n", u8::from(unc)));
    }
    write_file(&args.out.join("credibility.tsv"), &credibility)?;

    println!(
        "wrote {} users, {} news items ({} incidences) to {}",
        data.hypergraph.node_count(),
        data.hypergraph.edge_count(),
        data.hypergraph.incidence.incidence_count(),
        manifest.display()
    );
    Ok(())
}

fn cmd_early_detect(args: &EarlyDetectArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let cutoffs = parse_cutoffs(&args.cutoffs)?;
    let data = resolve_dataset(args.manifest.as_deref(), &config)?;
    let hypergraph = &data.hypergraph;
    if hypergraph.incidence_times.is_none() {
        return Err(DataError::MissingTimestamps.into());
    }

    // Train once on the full (un-windowed) data.
    let (params, _history) = train_with_mode(
        hypergraph,
        data.embeddings.as_ref(),
        &config.train,
        AblationMode::Full,
    )?;
    let prep = prepare(hypergraph, data.embeddings.as_ref(), &config.train)?;
    let split = split_edges(&prep.labels, config.train.ratios, config.train.seed)?;
    let full_report = test_metrics(&prep, &params, &config, &split)?;
    let total_incidences = hypergraph.incidence.incidence_count();

    let mut rows = Vec::new();
    for (label, secs) in &cutoffs {
        let windowed = time_window(hypergraph, *secs)?;
        let wprep = prepare(&windowed, data.embeddings.as_ref(), &config.train)?;
        let report = test_metrics(&wprep, &params, &config, &split)?;
        let kept = windowed.incidence.incidence_count();
        rows.push((
            label.clone(),
            *secs,
            kept as f64 / total_incidences as f64,
            kept as f64 / windowed.edge_count() as f64,
            report.accuracy.mean,
        ));
    }

    println!("accuracy vs cutoff (full-data test accuracy {:.4}):", full_report.accuracy.mean);
    println!("{:<8} {:>12} {:>10}", "cutoff", "seconds", "accuracy");
    for (label, secs, _, _, acc) in &rows {
        println!("{label:<8} {secs:>12} {acc:>10.4}");
    }
    println!();
    println!("participants vs cutoff:");
    println!("{:<8} {:>16} {:>16}", "cutoff", "kept_incidences", "users_per_item");
    for (label, _, kept_frac, users_per_edge, _) in &rows {
        println!("{label:<8} {kept_frac:>16.4} {users_per_edge:>16.2}");
    }

    let mut csv =
        String::from("cutoff,cutoff_seconds,kept_incidence_fraction,mean_users_per_item,test_accuracy\n");
    for (label, secs, kept_frac, upe, acc) in &rows {
        csv.push_str(&format!("{label},{secs},{kept_frac},{upe},{acc}\n"));
    }
    csv.push_str(&format!(
        "full,inf,1,{},{}\n",
        total_incidences as f64 / hypergraph.edge_count() as f64,
        full_report.accuracy.mean
    ));
    write_file(&args.out.join("early_detect.csv"), &csv)?;
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let data = resolve_dataset(args.dataset.as_deref(), &config)?;
    let stats = case_study_stats(&data.hypergraph)?;
    write_file(&args.out.join("analysis.csv"), &stats.to_csv())?;
    print!("{}", stats.table());
    Ok(())
}

fn cmd_export_embeddings(args: &ExportEmbeddingsArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let data = resolve_dataset(args.manifest.as_deref(), &config)?;
    let params = match &args.ckpt {
        Some(path) => {
            let (params, _seed, config_hash) = ModelParams::load(path)?;
            if config_hash != config.train.config_hash() {
                eprintln!(
                    "warning: checkpoint was trained under a different configuration \
                     (hash {:016x}, current {:016x})",
                    config_hash,
                    config.train.config_hash()
                );
            }
            params
        }
        None => {
            train_with_mode(
                &data.hypergraph,
                data.embeddings.as_ref(),
                &config.train,
                AblationMode::Full,
            )?
            .0
        }
    };
    let prep = prepare(&data.hypergraph, data.embeddings.as_ref(), &config.train)?;
    let split = split_edges(&prep.labels, config.train.ratios, config.train.seed)?;
    let outputs = score(&prep, &params, &config.train, AblationMode::Full, &split.train)?;
    if let Some(dir) = args.out.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    }
    export_embeddings(&data.edge_ids, &prep.labels, &outputs, &args.out)?;
    println!(
        "wrote {} embeddings of width {} to {}",
        data.edge_ids.len(),
        outputs.ze.cols() + outputs.u.cols(),
        args.out.display()
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::EarlyDetect(args) => cmd_early_detect(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::ExportEmbeddings(args) => cmd_export_embeddings(args),
    }
}

/// Full CLI entry point: parse, run, exit with the documented code.
pub fn main() -> ! {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version exit 0; real usage errors are config errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(()) => std::process::exit(0),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
