//! Command-line front end for the recourse toolkit: synthetic data
//! generation, gap-regularized SVM training, black-box fitting and
//! re-weighting, model evaluation, batch experiments, and flipsets.
//!
//! Structured results go to files named by flags; progress and errors go to
//! the error stream. Exit codes: 0 success, 1 usage error, 2 data/serialization
//! error, 3 numeric or training failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use recourse_core::blackbox::{self, BlackBoxSpec};
use recourse_core::dataset::{
    load_csv, make_synthetic, standardize_in_place, GroupedDataset, PreprocessSpec, SyntheticKind,
    SyntheticSpec,
};
use recourse_core::error::{Error, Result};
use recourse_core::harness::{run_experiment, ExperimentConfig, KernelFamily};
use recourse_core::local_explainer::ExplainerConfig;
use recourse_core::recourse_svm::{
    evaluate_recourse, flipset, train_iterative, IterationRecord, RecourseEvaluation,
    RecourseSvmModel, TrainConfig,
};
use recourse_core::reweight::equalize;
use recourse_core::KernelSpec;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "recourse",
    version,
    about = "Train and evaluate classifiers whose recourse is balanced across two groups"
)]
struct Cli {
    /// Seed for every randomized step; deterministic subcommands ignore it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-feature dataset and write it as CSV.
    Synth(SynthArgs),
    /// Train the gap-regularized kernel SVM and save the model as JSON.
    TrainSvm(TrainSvmArgs),
    /// Fit a black-box classifier with unit sample weights.
    TrainBlackbox(TrainBlackboxArgs),
    /// Re-weight and re-fit a black box so group recourse evens out.
    Equalize(EqualizeArgs),
    /// Measure accuracy and the group recourse gap of a saved SVM model.
    Evaluate(EvaluateArgs),
    /// Run repeated train/test experiments with cross-validated settings.
    Experiment(ExperimentArgs),
    /// Compute the minimal boundary-crossing change for one data row.
    Flipset(FlipsetArgs),
}

/// Column-mapping and preprocessing flags shared by every CSV-loading
/// subcommand. The defaults match the files `synth` writes.
#[derive(Args)]
struct PrepArgs {
    /// Column holding the class label.
    #[arg(long, default_value = "label")]
    target_column: String,

    /// Cell value mapped to class +1; every other value becomes -1.
    #[arg(long, default_value = "1")]
    positive_target: String,

    /// Column holding the group membership.
    #[arg(long, default_value = "group")]
    group_column: String,

    /// Cell value mapped to group +1; every other value becomes -1.
    #[arg(long, default_value = "1")]
    positive_group: String,

    /// Standardize features to mean 0 / standard deviation 1 on load.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    scale: bool,

    /// Drop rows with missing or unparseable cells instead of failing.
    #[arg(long)]
    drop_missing: bool,

    /// Keep the group column among the features as well.
    #[arg(long)]
    keep_group_feature: bool,
}

impl PrepArgs {
    fn spec(&self) -> PreprocessSpec {
        PreprocessSpec {
            standardize: self.scale,
            drop_rows_with_missing: self.drop_missing,
            keep_group_feature: self.keep_group_feature,
            ..PreprocessSpec::new(
                &self.target_column,
                &self.positive_target,
                &self.group_column,
                &self.positive_group,
            )
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,

    #[command(flatten)]
    prep: PrepArgs,
}

impl DataArgs {
    fn load(&self) -> Result<GroupedDataset> {
        load_csv(&self.data, &self.prep.spec())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Shifted Gaussian clusters separated by a linear boundary.
    Linear,
    /// A positive cluster ringed by negatives at group-dependent radii.
    Ring,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset geometry.
    #[arg(long, value_enum)]
    kind: SynthKind,

    /// Rows per (label, group) cell; the file holds four times this many.
    #[arg(long, default_value_t = 100)]
    n_per_cell: usize,

    /// Extra distance between the boundary and group -1's negatives.
    #[arg(long, default_value_t = 3.0)]
    shift: f64,

    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,

    /// Standardize features before writing.
    #[arg(long)]
    scale: bool,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSvmArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Recourse-gap regularizer strength; 0 trains a plain SVM.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,

    /// Slack penalty bound of the dual.
    #[arg(long, default_value_t = 10.0)]
    nu: f64,

    /// Kernel: linear, poly:D, or rbf:G.
    #[arg(long, default_value = "linear")]
    kernel: String,

    /// Comma-separated per-feature action costs (default: all 1).
    #[arg(long)]
    cost: Option<String>,

    /// Weight-refresh rounds after the initial unregularized fit.
    #[arg(long, default_value_t = 10)]
    max_iters: usize,

    /// Where to save the trained model (JSON).
    #[arg(long)]
    model: PathBuf,

    /// Optional JSON training summary (accuracies, gaps, per-round trace).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainBlackboxArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Classifier family: logistic, adaboost, or forest.
    #[arg(long, default_value = "logistic")]
    blackbox: String,

    /// Where to save the fitted model (JSON).
    #[arg(long)]
    model: PathBuf,

    /// Optional JSON summary (family and training accuracy).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EqualizeArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Classifier family: logistic, adaboost, or forest.
    #[arg(long, default_value = "logistic")]
    blackbox: String,

    /// Samples drawn per surrogate neighborhood set.
    #[arg(long, default_value_t = 5000)]
    surrogate_samples: usize,

    /// Width of the surrogate sample-weight kernel (default: 0.75 * sqrt(d)).
    #[arg(long)]
    kernel_width: Option<f64>,

    /// Output JSON with weights, both fitted models, and both gap
    /// evaluations.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Trained SVM model (JSON) to evaluate.
    #[arg(long)]
    model: PathBuf,

    /// Optional JSON evaluation output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    /// Gap-regularized SVM with cross-validated lambda and kernel.
    Svm,
    /// Black-box re-weighting driven by surrogate distances.
    Agnostic,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Dataset name: `german` (bundled CSV), `synth-linear`, `synth-ring`,
    /// or any label when --data points at a CSV file.
    #[arg(long)]
    dataset: String,

    /// CSV backing the dataset name; overrides the built-in resolution.
    #[arg(long)]
    data: Option<PathBuf>,

    #[command(flatten)]
    prep: PrepArgs,

    /// Equalization method.
    #[arg(long, value_enum, default_value_t = MethodKind::Svm)]
    method: MethodKind,

    /// Kernel family for the svm method: linear, poly, or poly:D to pin a
    /// single degree.
    #[arg(long, default_value = "linear")]
    kernel: String,

    /// Black-box family for the agnostic method.
    #[arg(long, default_value = "logistic")]
    blackbox: String,

    /// Comma-separated regularizer grid searched by cross-validation.
    #[arg(long)]
    lambda_grid: Option<String>,

    /// Comma-separated polynomial degree grid.
    #[arg(long)]
    degree_grid: Option<String>,

    /// Repeated runs, each on a fresh subsample and split.
    #[arg(long, default_value_t = 10)]
    runs: usize,

    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    folds: usize,

    /// Rows subsampled per run.
    #[arg(long, default_value_t = 1000)]
    sample_size: usize,

    /// Slack penalty bound of the SVM dual.
    #[arg(long, default_value_t = 10.0)]
    nu: f64,

    /// Weight-refresh rounds of the iterative SVM training.
    #[arg(long, default_value_t = 10)]
    max_iters: usize,

    /// Samples drawn per surrogate neighborhood set (agnostic method).
    #[arg(long, default_value_t = 5000)]
    surrogate_samples: usize,

    /// Worker threads for concurrent runs; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,

    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,

    /// Optional per-run records CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct FlipsetArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Trained SVM model (JSON).
    #[arg(long)]
    model: PathBuf,

    /// Zero-based row index of the point to move across the boundary.
    #[arg(long)]
    index: usize,

    /// Optional JSON output with the target point and its cost.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; those print to stdout and
            // exit 0, anything else is a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Csv { .. } | Error::Serialization(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => run_synth(cli.seed, args),
        Command::TrainSvm(args) => run_train_svm(args),
        Command::TrainBlackbox(args) => run_train_blackbox(cli.seed, args),
        Command::Equalize(args) => run_equalize(cli.seed, args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Experiment(args) => run_experiment_cmd(cli.seed, args),
        Command::Flipset(args) => run_flipset(args),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_cost(raw: Option<&str>, dim: usize) -> Result<Vec<f64>> {
    match raw {
        None => Ok(vec![1.0; dim]),
        Some(list) => list
            .split(',')
            .map(|part| {
                part.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("bad cost entry {:?} in {list:?}", part.trim()))
                })
            })
            .collect(),
    }
}

fn parse_f64_list(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|part| {
            part.trim().parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!("bad number {:?} in {list:?}", part.trim()))
            })
        })
        .collect()
}

fn parse_u32_list(list: &str) -> Result<Vec<u32>> {
    list.split(',')
        .map(|part| {
            part.trim().parse::<u32>().map_err(|_| {
                Error::InvalidInput(format!("bad degree {:?} in {list:?}", part.trim()))
            })
        })
        .collect()
}

fn run_synth(seed: u64, args: SynthArgs) -> Result<()> {
    let kind = match args.kind {
        SynthKind::Linear => SyntheticKind::LinearShiftedGaussians,
        SynthKind::Ring => SyntheticKind::RingVsCluster,
    };
    let mut ds = make_synthetic(&SyntheticSpec {
        kind,
        n_per_cell: args.n_per_cell,
        group_shift: args.shift,
        noise_sd: args.noise,
        seed,
    })?;
    if args.scale {
        standardize_in_place(&mut ds);
    }
    write_dataset_csv(&ds, &args.out)?;
    log::info!(
        "wrote {} rows x {} features to {}",
        ds.n(),
        ds.dim(),
        args.out.display()
    );
    Ok(())
}

fn write_dataset_csv(ds: &GroupedDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<String> = ds.feature_names().to_vec();
    header.push("label".into());
    header.push("group".into());
    writer
        .write_record(&header)
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = ds.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(ds.labels()[i].to_string());
        record.push(ds.groups()[i].to_string());
        writer
            .write_record(&record)
            .map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// JSON summary written by `train-svm --out`.
#[derive(Serialize)]
struct TrainSummary {
    kernel: String,
    lambda: f64,
    nu: f64,
    rounds: usize,
    predictions_stable: bool,
    train_accuracy_baseline: f64,
    train_accuracy_final: f64,
    gap_baseline: RecourseEvaluation,
    gap_final: RecourseEvaluation,
    trace: Vec<IterationRecord>,
}

fn run_train_svm(args: TrainSvmArgs) -> Result<()> {
    let ds = args.data.load()?;
    let kernel: KernelSpec = args.kernel.parse()?;
    let cost = parse_cost(args.cost.as_deref(), ds.dim())?;
    let cfg = TrainConfig {
        lambda: args.lambda,
        nu: args.nu,
        max_iters: args.max_iters,
        ..TrainConfig::default()
    };
    let outcome = train_iterative(&ds, &kernel, &cost, &cfg)?;
    outcome.model.save(&args.model)?;

    let gap_baseline = evaluate_recourse(&outcome.vanilla, &ds)?;
    let gap_final = evaluate_recourse(&outcome.model, &ds)?;
    log::info!(
        "trained {kernel} model (lambda {}): train gap {:.4} -> {:.4}, saved to {}",
        args.lambda,
        gap_baseline.u_abs,
        gap_final.u_abs,
        args.model.display()
    );
    if let Some(out) = &args.out {
        let summary = TrainSummary {
            kernel: kernel.to_string(),
            lambda: args.lambda,
            nu: args.nu,
            rounds: outcome.trace.len(),
            predictions_stable: outcome.predictions_stable,
            train_accuracy_baseline: outcome.vanilla.accuracy(&ds)?,
            train_accuracy_final: outcome.model.accuracy(&ds)?,
            gap_baseline,
            gap_final,
            trace: outcome.trace,
        };
        write_json(&summary, out)?;
    }
    Ok(())
}

/// JSON summary written by `train-blackbox --out`.
#[derive(Serialize)]
struct BlackboxSummary {
    family: String,
    train_accuracy: f64,
}

fn run_train_blackbox(seed: u64, args: TrainBlackboxArgs) -> Result<()> {
    let ds = args.data.load()?;
    let spec: BlackBoxSpec = args.blackbox.parse()?;
    let model = blackbox::fit(&spec, &ds, &vec![1.0; ds.n()], seed)?;
    model.save(&args.model)?;
    let train_accuracy = model.accuracy(&ds)?;
    log::info!(
        "fitted {spec} box: train accuracy {train_accuracy:.3}, saved to {}",
        args.model.display()
    );
    if let Some(out) = &args.out {
        write_json(
            &BlackboxSummary {
                family: spec.to_string(),
                train_accuracy,
            },
            out,
        )?;
    }
    Ok(())
}

fn run_equalize(seed: u64, args: EqualizeArgs) -> Result<()> {
    let ds = args.data.load()?;
    let spec: BlackBoxSpec = args.blackbox.parse()?;
    let cfg = ExplainerConfig {
        n_samples: args.surrogate_samples,
        kernel_width: args.kernel_width,
        seed,
        ..ExplainerConfig::default()
    };
    let result = equalize(&ds, &spec, &cfg)?;
    let reweighted = result.weights.iter().filter(|w| **w < 1.0).count();
    log::info!(
        "equalized {spec} box: gap {:.4} -> {:.4}, {reweighted} of {} points down-weighted",
        result.before.u_abs,
        result.after.u_abs,
        ds.n()
    );
    write_json(&result, &args.out)
}

/// JSON summary written by `evaluate --out`.
#[derive(Serialize)]
struct EvaluationSummary {
    accuracy: f64,
    recourse: RecourseEvaluation,
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let ds = args.data.load()?;
    let model = RecourseSvmModel::load(&args.model)?;
    let accuracy = model.accuracy(&ds)?;
    let recourse = evaluate_recourse(&model, &ds)?;
    log::info!(
        "accuracy {accuracy:.3}, group recourse {:.4} vs {:.4} (gap {:.4})",
        recourse.recourse_group_pos,
        recourse.recourse_group_neg,
        recourse.u_abs
    );
    if let Some(out) = &args.out {
        write_json(&EvaluationSummary { accuracy, recourse }, out)?;
    }
    Ok(())
}

/// Resolves `--dataset` to actual rows: bundled names, generated synthetics,
/// or a caller-provided CSV.
fn experiment_dataset(seed: u64, args: &ExperimentArgs) -> Result<GroupedDataset> {
    if let Some(path) = &args.data {
        return load_csv(path, &args.prep.spec());
    }
    match args.dataset.as_str() {
        "german" => {
            let path = Path::new("data/german_numerical-binsensitive.csv");
            if !path.exists() {
                return Err(Error::Data(format!(
                    "bundled dataset file {} not found; run from the repository root or pass --data",
                    path.display()
                )));
            }
            let spec = PreprocessSpec {
                keep_group_feature: true,
                standardize: args.prep.scale,
                ..PreprocessSpec::new("credit", "1", "sex", "1")
            };
            load_csv(path, &spec)
        }
        "synth-linear" | "synth-ring" => {
            let kind = if args.dataset == "synth-linear" {
                SyntheticKind::LinearShiftedGaussians
            } else {
                SyntheticKind::RingVsCluster
            };
            let mut ds = make_synthetic(&SyntheticSpec {
                kind,
                n_per_cell: 300,
                group_shift: 3.0,
                noise_sd: 0.5,
                seed,
            })?;
            if args.prep.scale {
                standardize_in_place(&mut ds);
            }
            Ok(ds)
        }
        other => Err(Error::InvalidInput(format!(
            "unknown dataset '{other}'; use german, synth-linear, synth-ring, or pass --data <csv>"
        ))),
    }
}

/// Splits the experiment `--kernel` flag into a family plus an optional
/// pinned degree (`poly:3` pins the grid to that one degree).
fn parse_family(raw: &str) -> Result<(KernelFamily, Option<u32>)> {
    if raw == "linear" {
        return Ok((KernelFamily::Linear, None));
    }
    if raw == "poly" || raw == "polynomial" {
        return Ok((KernelFamily::Polynomial, None));
    }
    if let Some(("poly", d)) = raw.split_once(':') {
        let degree = d
            .parse::<u32>()
            .map_err(|_| Error::InvalidInput(format!("bad polynomial degree {d:?}")))?;
        return Ok((KernelFamily::Polynomial, Some(degree)));
    }
    Err(Error::InvalidInput(format!(
        "experiment grids cover linear and polynomial kernels, got {raw:?}"
    )))
}

fn run_experiment_cmd(seed: u64, args: ExperimentArgs) -> Result<()> {
    let ds = experiment_dataset(seed, &args)?;
    let mut cfg = match args.method {
        MethodKind::Svm => {
            let (family, pinned_degree) = parse_family(&args.kernel)?;
            let mut cfg = ExperimentConfig::svm(&args.dataset, family);
            if let Some(grid) = &args.lambda_grid {
                cfg.lambda_grid = parse_f64_list(grid)?;
            }
            if let Some(grid) = &args.degree_grid {
                cfg.degree_grid = parse_u32_list(grid)?;
            }
            if let Some(degree) = pinned_degree {
                cfg.degree_grid = vec![degree];
            }
            cfg
        }
        MethodKind::Agnostic => {
            let mut cfg = ExperimentConfig::agnostic(&args.dataset, args.blackbox.parse()?);
            cfg.explainer.n_samples = args.surrogate_samples;
            cfg
        }
    };
    cfg.n_runs = args.runs;
    cfg.cv_folds = args.folds;
    cfg.sample_size = args.sample_size;
    cfg.nu = args.nu;
    cfg.svm_max_iters = args.max_iters;
    cfg.workers = args.workers;
    cfg.seed = seed;

    let report = run_experiment(&ds, &cfg)?;
    report.save_json(&args.out)?;
    if let Some(records) = &args.records {
        report.save_records_csv(records)?;
    }
    log::info!(
        "{} runs on {}: median train gap {:.4} -> {:.4}, median test gap {:.4} -> {:.4}, report at {}",
        report.completed_runs,
        report.dataset,
        report.statistics.train_u_abs_before.median,
        report.statistics.train_u_abs_after.median,
        report.statistics.test_u_abs_before.median,
        report.statistics.test_u_abs_after.median,
        args.out.display()
    );
    Ok(())
}

fn run_flipset(args: FlipsetArgs) -> Result<()> {
    let ds = args.data.load()?;
    let model = RecourseSvmModel::load(&args.model)?;
    if args.index >= ds.n() {
        return Err(Error::InvalidInput(format!(
            "row index {} out of range for {} rows",
            args.index,
            ds.n()
        )));
    }
    let flip = flipset(&model, ds.row(args.index))?;
    log::info!(
        "row {} crosses the boundary at cost {:.4} (decision value {:.2e})",
        args.index,
        flip.cost_distance,
        flip.achieved_value
    );
    if let Some(out) = &args.out {
        write_json(&flip, out)?;
    }
    Ok(())
}
