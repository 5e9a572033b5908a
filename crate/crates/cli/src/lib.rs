//! The `refrakt` command line: synthesize datasets, export preprocessed
//! segments, train, evaluate, and turn fold results into statistics and
//! report tables.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 when the
//! run itself fails. Every command that writes an output directory also
//! writes `run-manifest.json` there.

pub mod config;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use refrakt_core::evalharness::{
    load_dataset, materialize_subject, read_fold_results, run_scenario, train_pooled, write_fold_results, write_summary_csv, FoldResult,
    Scenario,
};
use refrakt_core::fusion::{save_segment, Modality};
use refrakt_core::nn::save_checkpoint;
use refrakt_core::synthgen::{generate_dataset, Schedule};
use refrakt_core::Error;

use config::{ExperimentConfig, Overrides};
use manifest::{hash_all, list_files, Artifact, RunManifest};

pub const THREADS_ENV: &str = "REFRAKT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or inputs; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// The run failed; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "refrakt", version, about = "Refractive-power classification from EOG and eye-tracking recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Export per-subject normalized feature segments.
    Preprocess(RunArgs),
    /// Train one model on every subject pooled and save a checkpoint.
    Train(RunArgs),
    /// Cross-validate and write fold results.
    Eval(RunArgs),
    /// Nonparametric tests across modalities from fold results.
    Stats(StatsArgs),
    /// Per-subject accuracy and confusion tables from fold results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config or a previous run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    modality: Option<Modality>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    window_stride: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            dataset: self.dataset.clone(),
            modality: self.modality,
            scenario: self.scenario,
            seed: self.seed,
            out: self.out.clone(),
            window_len: self.window_len,
            window_stride: self.window_stride,
            epochs: self.epochs,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// How strongly the lens condition shifts the signals.
    #[arg(long)]
    effect: Option<f64>,
    /// Scale of subject-specific structure shared by no one else.
    #[arg(long)]
    confound: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// `full` for the full session timing, `compact` for a short one.
    #[arg(long, value_parser = ["full", "compact"])]
    schedule: Option<String>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// FoldResult JSONL files, typically one per modality.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Bonferroni family size (default: the number of Wilcoxon tests run).
    #[arg(long)]
    family: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Caps the global worker pool at `REFRAKT_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={v} is not a positive integer")))?;
    // a second call in the same process finds the pool already built
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("worker pool already configured");
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Preprocess(a) => preprocess(&a.resolve()?),
        Command::Train(a) => train(&a.resolve()?),
        Command::Eval(a) => eval(&a.resolve()?),
        Command::Stats(a) => stats(&a),
        Command::Report(a) => report(&a),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn dataset_inputs(root: &Path) -> Result<Vec<Artifact>, CliError> {
    hash_all(root, &list_files(root)?)
}

fn finish(command: &str, cfg: Option<&ExperimentConfig>, out: &Path, inputs: Vec<Artifact>) -> Result<(), CliError> {
    let artifacts = hash_all(out, &list_files(out)?)?;
    let m = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.map(|c| c.seed),
        config: cfg.cloned(),
        inputs,
        artifacts,
    };
    m.write(out)?;
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: a.seed,
        out: a.out.clone(),
        ..Overrides::default()
    });
    let spec = &mut cfg.synth;
    if let Some(n) = a.subjects {
        spec.n_subjects = n;
    }
    if let Some(x) = a.effect {
        spec.class_effect_scale = x;
    }
    if let Some(x) = a.confound {
        spec.confound_scale = x;
    }
    if let Some(x) = a.noise {
        spec.noise_sd = x;
    }
    match a.schedule.as_deref() {
        Some("full") => spec.schedule = Schedule::full(),
        Some(_) => spec.schedule = Schedule::compact(),
        None => {}
    }
    let out = cfg.require_out()?.to_path_buf();
    create_dir(&out)?;
    let dirs = generate_dataset(&cfg.synth, &out)?;
    println!("wrote {} subjects to {}", dirs.len(), out.display());
    finish("synth", Some(&cfg), &out, vec![])
}

fn preprocess(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let root = cfg.require_dataset()?;
    let out = cfg.require_out()?;
    let subjects = load_dataset(root, &cfg.preprocess)?;
    create_dir(out)?;
    let mut n = 0;
    for s in &subjects {
        let dir = out.join(&s.subject_id).join(cfg.modality.name());
        create_dir(&dir)?;
        for seg in materialize_subject(s, cfg.modality)? {
            let name = format!("class{:02}_trial{}.csv", seg.label.index(), seg.trial_slot);
            save_segment(&seg, &dir.join(name))?;
            n += 1;
        }
    }
    println!("wrote {n} {} segments ({} columns) to {}", cfg.modality, cfg.modality.width(), out.display());
    finish("preprocess", Some(cfg), out, dataset_inputs(root)?)
}

fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let root = cfg.require_dataset()?;
    let out = cfg.require_out()?;
    let subjects = load_dataset(root, &cfg.preprocess)?;
    let (outcome, norm) = train_pooled(&subjects, cfg.modality, &cfg.eval_config())?;
    create_dir(out)?;
    save_checkpoint(&outcome.best_model, &cfg.train, &out.join("model.ckpt"))?;
    write(&out.join("norm.json"), to_json(&norm))?;
    write(&out.join("history.json"), to_json(&outcome.history))?;
    println!("best validation epoch {} of {}", outcome.best_epoch + 1, cfg.train.epochs);
    finish("train", Some(cfg), out, dataset_inputs(root)?)
}

fn results_name(prefix: &str, m: Modality, s: Scenario, ext: &str) -> String {
    format!("{prefix}_{}_{}.{ext}", m.name(), s.name())
}

fn eval(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let root = cfg.require_dataset()?;
    let out = cfg.require_out()?;
    let subjects = load_dataset(root, &cfg.preprocess)?;
    let runs = run_scenario(&subjects, cfg.scenario, cfg.modality, &cfg.eval_config())?;
    let results: Vec<FoldResult> = runs.into_iter().map(|r| r.result).collect();
    create_dir(out)?;
    write_fold_results(&results, &out.join(results_name("folds", cfg.modality, cfg.scenario, "jsonl")))?;
    write_summary_csv(&results, &out.join(results_name("summary", cfg.modality, cfg.scenario, "csv")))?;
    let mean = results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64;
    println!("{} {} over {} folds: mean accuracy {mean:.3}%", cfg.modality, cfg.scenario, results.len());
    finish("eval", Some(cfg), out, dataset_inputs(root)?)
}

fn load_results(paths: &[PathBuf]) -> Result<(Vec<FoldResult>, Vec<Artifact>), CliError> {
    let mut all = Vec::new();
    let mut inputs = Vec::new();
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Usage(format!("{} does not exist", p.display())));
        }
        all.extend(read_fold_results(p)?);
        inputs.push(Artifact {
            path: p.display().to_string(),
            sha256: manifest::sha256_file(p)?,
        });
    }
    Ok((all, inputs))
}

fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let (results, inputs) = load_results(&a.results)?;
    let table = report::stats_table(&results, a.family)?;
    create_dir(&a.out)?;
    write(&a.out.join("stats.json"), to_json(&table))?;
    for e in &table {
        match e.p_adjusted {
            Some(adj) => println!("{:<13} {:<28} {:>10.4} p={:.3e} adj={:.3e}", e.test, e.comparison, e.statistic, e.p, adj),
            None => println!("{:<13} {:<28} {:>10.4} p={:.3e}", e.test, e.comparison, e.statistic, e.p),
        }
    }
    finish("stats", None, &a.out, inputs)
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let (results, inputs) = load_results(&a.results)?;
    if results.is_empty() {
        return Err(CliError::Usage("no fold results in the given files".into()));
    }
    create_dir(&a.out)?;
    for (m, rs) in report::by_modality(&results) {
        write(&a.out.join(format!("accuracy_{m}.csv")), report::accuracy_csv(&rs))?;
        let c = report::total_confusion(&rs)?;
        write(&a.out.join(format!("confusion_{m}.csv")), report::confusion_csv(&c, false))?;
        write(&a.out.join(format!("confusion_{m}_percent.csv")), report::confusion_csv(&c, true))?;
    }
    println!("wrote report tables to {}", a.out.display());
    finish("report", None, &a.out, inputs)
}
