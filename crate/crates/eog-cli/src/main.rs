//! `eogc`: runs the EOG cycle classification pipeline stage by stage, with
//! CSV files between stages, or in one go with `run-all`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or file-format
//! error, 4 validation failure, 5 internal error.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eog_core::dataset::{
    read_features, smote, validate_smote, write_features, Dataset, SmoteValidation,
};
use eog_core::dsp::Preprocessor;
use eog_core::evalbench::{
    classification_index, figure_of_merit, kfold_cv, latency_bench, write_report, EvalReport,
};
use eog_core::neural::TrainHistory;
use eog_core::pipeline::{
    bench_records, context_window, original_features, par_map, prepare, train_with, ModelBundle,
    ModelKind, PipelineConfig, PreparedData,
};
use eog_core::segment::{read_cycles, segment_record, write_cycles};
use eog_core::synthgen::{gen_dataset, list_trials, read_trial, write_trial};
use eog_core::{dataset::featurize_cycles, EyeClass};

use config::{RunConfig, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "eogc",
    version,
    about = "Single-cycle EOG eye-movement classification pipeline"
)]
struct Cli {
    /// Run configuration: `key=value` lines with dotted keys.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads for per-trial and per-fold work (overrides run.threads).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic trials: samples, metadata and placement logs.
    Generate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth, high-pass and detrend every trial of a directory.
    Preprocess {
        /// Directory of trials.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Use wavelet denoising instead of the moving average.
        #[arg(long)]
        wavelet: bool,
    },
    /// Cut preprocessed trials into fixed-length cycles.
    Segment {
        /// Directory of preprocessed trials.
        #[arg(long = "in")]
        input: PathBuf,
        /// Cycle CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the 26 features of every cycle.
    Featurize {
        /// Cycle CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Feature CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Oversample every class with SMOTE and check the synthetic rows with
    /// t-tests. Exits with 4 when a class fails the check.
    Balance {
        /// Feature CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Balanced feature CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Rows per class after oversampling (overrides smote.target).
        #[arg(long)]
        target: Option<usize>,
    },
    /// Split, train a model and save it with its training history and the
    /// held-out rows.
    Train {
        /// ann, cnn, cascade-ann or cascade-cnn.
        #[arg(long)]
        model: ModelKind,
        /// Balanced feature CSV (original features in after-split mode).
        #[arg(long = "in")]
        input: PathBuf,
        /// Model file to write. The held-out rows go to `<stem>.test.csv`
        /// and the history to `<stem>.history.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a feature CSV.
    Eval {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Feature CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for report.json and report.txt.
        #[arg(long)]
        report: PathBuf,
    },
    /// Stratified k-fold cross-validation of a model kind.
    Crossval {
        /// ann, cnn, cascade-ann or cascade-cnn.
        #[arg(long)]
        model: ModelKind,
        /// Feature CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Number of folds (overrides cv.folds).
        #[arg(long)]
        folds: Option<usize>,
        /// Directory for per-fold reports and the summary.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time single-cycle inference on raw trial windows and report accuracy,
    /// latency, CI and FoM.
    Bench {
        /// Model file.
        #[arg(long)]
        model: PathBuf,
        /// Directory of raw trials.
        #[arg(long)]
        trials: PathBuf,
        /// Timed passes over the windows (overrides bench.reps).
        #[arg(long)]
        reps: Option<usize>,
        /// Untimed warm-up inferences, at least 10 (overrides bench.warmup).
        #[arg(long)]
        warmup: Option<usize>,
        /// Directory for report.json and report.txt.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print a classification index or figure of merit.
    Metrics {
        #[command(subcommand)]
        metric: Metric,
    },
    /// Generate, preprocess, segment, featurize, balance, train and evaluate
    /// in one process.
    RunAll {
        /// Output directory (overrides run.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Models to train; repeat the flag for several. Defaults to all four.
        #[arg(long)]
        model: Vec<ModelKind>,
        /// Also run the latency benchmark and attach CI and FoM.
        #[arg(long)]
        bench: bool,
    },
}

#[derive(Debug, Subcommand)]
enum Metric {
    /// Classification index k(acc - 1/k)/(1 - 1/k).
    Ci {
        #[arg(long)]
        accuracy: f64,
        #[arg(long)]
        classes: usize,
    },
    /// Figure of merit CI * min(1, 250 / latency).
    Fom {
        #[arg(long)]
        ci: f64,
        /// Latency in milliseconds.
        #[arg(long)]
        latency: f64,
    },
}

#[derive(Debug)]
enum CliError {
    Core(eog_core::Error),
    Validation(String),
}

impl From<eog_core::Error> for CliError {
    fn from(e: eog_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        use eog_core::Error as E;
        match self {
            CliError::Validation(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) => 2,
                E::InvalidInput(_)
                | E::UnknownLabel(_)
                | E::Format(_)
                | E::Version { .. }
                | E::ShapeMismatch { .. }
                | E::Io(_) => 3,
                E::Numerical(_) => 5,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eogc: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Metrics { metric } = &cli.command {
        return metrics(metric);
    }
    let vars: BTreeMap<String, String> = std::env::vars().collect();
    let mut cfg = RunConfig::load(cli.config.as_deref(), &vars)?;
    if let Some(t) = cli.threads {
        cfg.set("run.threads", &t.to_string())?;
    }
    match cli.command {
        Command::Generate { out } => generate(&cfg, &out),
        Command::Preprocess {
            input,
            out,
            wavelet,
        } => {
            if wavelet {
                cfg.set("preprocess.wavelet", "true")?;
            }
            preprocess(&cfg, &input, &out)
        }
        Command::Segment { input, out } => segment(&cfg, &input, &out),
        Command::Featurize { input, out } => featurize(&cfg, &input, &out),
        Command::Balance { input, out, target } => {
            if let Some(t) = target {
                cfg.set("smote.target", &t.to_string())?;
            }
            balance(&cfg, &input, &out)
        }
        Command::Train { model, input, out } => train(&cfg, model, &input, &out),
        Command::Eval {
            model,
            input,
            report,
        } => eval(&cfg, &model, &input, &report),
        Command::Crossval {
            model,
            input,
            folds,
            report,
        } => {
            if let Some(f) = folds {
                cfg.set("cv.folds", &f.to_string())?;
            }
            crossval(&cfg, model, &input, report.as_deref())
        }
        Command::Bench {
            model,
            trials,
            reps,
            warmup,
            report,
        } => {
            if let Some(r) = reps {
                cfg.set("bench.reps", &r.to_string())?;
            }
            if let Some(w) = warmup {
                cfg.set("bench.warmup", &w.to_string())?;
            }
            bench(&cfg, &model, &trials, report.as_deref())
        }
        Command::RunAll { out, model, bench } => {
            if let Some(o) = out {
                cfg.set("run.out_dir", &o.to_string_lossy())?;
            }
            let models = if model.is_empty() {
                ModelKind::ALL.to_vec()
            } else {
                model
            };
            run_all(&cfg, &models, bench)
        }
        Command::Metrics { .. } => unreachable!("handled above"),
    }
}

fn metrics(metric: &Metric) -> CliResult<()> {
    let value = match *metric {
        Metric::Ci { accuracy, classes } => classification_index(accuracy, classes)?,
        Metric::Fom { ci, latency } => figure_of_merit(ci, latency)?,
    };
    println!("{value:.2}");
    Ok(())
}

/// Writes the resolved configuration next to an output: inside it for a
/// directory, as `<file>.conf` for a file.
fn write_resolved(cfg: &RunConfig, output: &Path) -> CliResult<()> {
    let path = if output.is_dir() {
        output.join("run.conf")
    } else {
        let mut name = output.as_os_str().to_owned();
        name.push(".conf");
        PathBuf::from(name)
    };
    fs::write(path, cfg.render())?;
    Ok(())
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// `<dir>/<stem>.<suffix>` for an output file path.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn generate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let gen = &cfg.pipeline.gen;
    let trials = gen_dataset(gen)?;
    fs::create_dir_all(out)?;
    for t in &trials {
        write_trial(out, &t.record, Some(&t.placements), gen.seed)?;
    }
    write_resolved(cfg, out)?;
    eprintln!("wrote {} trials to {}", trials.len(), out.display());
    Ok(())
}

fn preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let files = list_trials(input)?;
    fs::create_dir_all(out)?;
    par_map(&files, cfg.pipeline.threads, |path| {
        let t = read_trial(path)?;
        let pre = Preprocessor::new(cfg.pipeline.preprocess.clone(), t.record.sampling_rate_hz)?;
        let filtered = pre.apply(&t.record)?;
        write_trial(out, &filtered, t.placements.as_deref(), t.seed)
    })?;
    write_resolved(cfg, out)?;
    eprintln!("preprocessed {} trials into {}", files.len(), out.display());
    Ok(())
}

fn segment(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let files = list_trials(input)?;
    let per_trial = par_map(&files, cfg.pipeline.threads, |path| {
        segment_record(&read_trial(path)?.record, &cfg.pipeline.peaks)
    })?;
    let cycles: Vec<_> = per_trial.into_iter().flatten().collect();
    ensure_parent(out)?;
    write_cycles(out, &cycles)?;
    write_resolved(cfg, out)?;
    eprintln!("wrote {} cycles from {} trials", cycles.len(), files.len());
    Ok(())
}

fn featurize(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let cycles = read_cycles(input)?;
    let data = featurize_cycles(&cycles, cfg.pipeline.gen.sampling_rate_hz)?;
    ensure_parent(out)?;
    write_features(out, &data)?;
    write_resolved(cfg, out)?;
    eprintln!("wrote {} feature rows", data.len());
    Ok(())
}

fn gate(v: &SmoteValidation) -> CliResult<()> {
    print!("{}", v.summary());
    if v.passed() {
        Ok(())
    } else {
        Err(CliError::Validation(
            "synthetic rows differ from the originals (a class mean p-value is at most 0.05)"
                .into(),
        ))
    }
}

fn balance(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let p = &cfg.pipeline;
    if p.smote_after_split {
        return Err(eog_core::Error::InvalidConfig(
            "smote.after_split is set: oversampling happens inside `train`".into(),
        )
        .into());
    }
    let data = read_features(input)?;
    let balanced = smote(&data, p.smote_target, p.smote_k, p.seed)?;
    ensure_parent(out)?;
    write_features(out, &balanced)?;
    write_resolved(cfg, out)?;
    gate(&validate_smote(&balanced)?)
}

/// Held-out split of the input, oversampling the training part first in
/// after-split mode.
fn prepared(p: &PipelineConfig, data: &Dataset) -> CliResult<PreparedData> {
    let prepared = prepare(data, p)?;
    if p.smote_after_split {
        gate(&validate_smote(&prepared.train)?)?;
    }
    Ok(prepared)
}

fn history_csv(histories: &[TrainHistory]) -> String {
    let mut s = String::from("network,epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (n, h) in histories.iter().enumerate() {
        s.push_str(&format!("{n},0,{},,,\n", h.initial_loss));
        for e in &h.epochs {
            s.push_str(&format!(
                "{n},{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.val_loss),
                opt(e.val_accuracy)
            ));
        }
    }
    s
}

fn train(cfg: &RunConfig, kind: ModelKind, input: &Path, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    let p = cfg.pipeline_for(kind);
    let data = read_features(input)?;
    let split = prepared(&p, &data)?;
    let trained = train_with(kind, &split.train, &p)?;
    ensure_parent(out)?;
    trained.bundle.save(out)?;
    write_features(&sibling(out, "test.csv"), &split.test)?;
    fs::write(sibling(out, "history.csv"), history_csv(&trained.histories))?;
    write_resolved(cfg, out)?;
    for (i, h) in trained.histories.iter().enumerate() {
        eprintln!(
            "{kind} network {}: {} epochs, best {} (train rows {}, validation rows {})",
            i + 1,
            h.epochs.len(),
            h.best_epoch,
            h.train_rows,
            h.val_rows
        );
    }
    eprintln!(
        "saved {} with {} held-out rows in {}",
        out.display(),
        split.test.len(),
        sibling(out, "test.csv").display()
    );
    Ok(())
}

fn emit_report(cfg: &RunConfig, report: &EvalReport, dir: Option<&Path>) -> CliResult<()> {
    print!("{}", report.render_table());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        write_report(dir, report)?;
        write_resolved(cfg, dir)?;
    }
    Ok(())
}

fn eval(cfg: &RunConfig, model: &Path, input: &Path, report: &Path) -> CliResult<()> {
    let bundle = ModelBundle::load(model)?;
    let data = read_features(input)?;
    emit_report(cfg, &bundle.evaluate(&data)?, Some(report))
}

fn crossval(
    cfg: &RunConfig,
    kind: ModelKind,
    input: &Path,
    report: Option<&Path>,
) -> CliResult<()> {
    cfg.validate()?;
    let p = cfg.pipeline_for(kind);
    let data = read_features(input)?;
    // Folds run in parallel; each trains on one thread.
    let fold_cfg = PipelineConfig {
        threads: 1,
        ..p.clone()
    };
    let cv = kfold_cv(
        &data,
        kind.as_str(),
        p.cv_folds,
        p.seed,
        p.threads,
        |_, train, test| {
            let bundle = train_with(kind, train, &fold_cfg)?.bundle;
            test.features
                .iter()
                .map(|row| {
                    let (c, _) = bundle.predict_row(row)?;
                    test.class_index(c.name())
                        .ok_or_else(|| eog_core::Error::UnknownLabel(c.to_string()))
                })
                .collect()
        },
    )?;
    print!("{}", cv.render_table());
    if let Some(dir) = report {
        fs::create_dir_all(dir)?;
        for (i, f) in cv.folds.iter().enumerate() {
            write_report(&dir.join(format!("fold-{}", i + 1)), f)?;
        }
        fs::write(dir.join("cv.json"), cv.to_json()?)?;
        fs::write(dir.join("cv.txt"), cv.render_table())?;
        write_resolved(cfg, dir)?;
    }
    Ok(())
}

/// Accuracy over the first pass of a benchmark, with its latency attached.
fn bench_report(
    kind: ModelKind,
    bundle: &ModelBundle,
    windows: &[eog_core::synthgen::SignalRecord],
    cfg: &RunConfig,
) -> CliResult<EvalReport> {
    let (latency, samples) = latency_bench(bundle, windows, cfg.bench_reps, cfg.bench_warmup)?;
    let first = &samples[..windows.len()];
    let truth: Vec<usize> = first.iter().map(|s| s.class.index()).collect();
    let pred: Vec<usize> = first.iter().map(|s| s.predicted.index()).collect();
    let report = EvalReport::from_predictions(
        &format!("{kind} (raw windows)"),
        &EyeClass::names(),
        &truth,
        &pred,
    )?;
    Ok(report.with_latency(latency)?)
}

fn bench(cfg: &RunConfig, model: &Path, trials: &Path, report: Option<&Path>) -> CliResult<()> {
    cfg.validate()?;
    let bundle = ModelBundle::load(model)?;
    let mut windows = Vec::new();
    for path in list_trials(trials)? {
        let t = read_trial(&path)?;
        let placements = t.placements.unwrap_or_default();
        windows.push(context_window(&t.record, &placements, &bundle.peaks)?);
    }
    let r = bench_report(bundle.kind, &bundle, &windows, cfg)?;
    emit_report(cfg, &r, report)
}

fn run_all(cfg: &RunConfig, models: &[ModelKind], with_bench: bool) -> CliResult<()> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out)?;
    write_resolved(cfg, &out)?;
    let p = &cfg.pipeline;
    let original = original_features(p)?;
    write_features(&out.join("features.csv"), &original)?;
    eprintln!("{} original cycles", original.len());
    if !p.smote_after_split {
        let balanced = smote(&original, p.smote_target, p.smote_k, p.seed)?;
        write_features(&out.join("balanced.csv"), &balanced)?;
        gate(&validate_smote(&balanced)?)?;
    }
    let windows = if with_bench {
        bench_records(&p.gen, &p.peaks, cfg.bench_per_class)?
    } else {
        Vec::new()
    };
    for &kind in models {
        let pk = cfg.pipeline_for(kind);
        let split = prepared(&pk, &original)?;
        let trained = train_with(kind, &split.train, &pk)?;
        let model_path = out.join(format!("{kind}.bin"));
        trained.bundle.save(&model_path)?;
        fs::write(
            out.join(format!("{kind}.history.csv")),
            history_csv(&trained.histories),
        )?;
        let mut report = trained.bundle.evaluate(&split.test)?;
        if with_bench {
            let b = bench_report(kind, &trained.bundle, &windows, cfg)?;
            report = report.with_latency(b.latency.expect("bench attaches latency"))?;
        }
        emit_report(cfg, &report, Some(&out.join(format!("report-{kind}"))))?;
    }
    Ok(())
}
