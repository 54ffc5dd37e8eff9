//! `tcn` command-line interface.
//!
//! Every subcommand writes under its `--out` directory. Failures print one
//! line `error[<kind>]: <message>` to stderr, exit nonzero, and remove any
//! files the invocation had already written.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    encode_matrix, format_splits, generate_synthetic, load_dataset, load_test_set, read_labels, read_matrix, read_splits,
    DatasetPaths, SyntheticSpec, TrainConfig, FEATURE_MAGIC,
};
use crate::error::{Error, Result};
use crate::eval::{metrics_from_scores, scores_csv};
use crate::gradcheck::gradcheck_suite;
use crate::linalg::sigmoid_scalar;
use crate::network::{contrast_logits, encode_checkpoint, load_checkpoint};
use crate::similarity::{class_similarity, similarity_csv};
use crate::train::{alpha_sweep, sweep_csv, train};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "tcn", version, about = "Contrastive image-to-class scoring for zero-shot recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset with a held-out test split.
    Synth(SynthArgs),
    /// Compute source-to-target class similarities and write them as CSV.
    Similarity(SimilarityArgs),
    /// Train a model; writes the epoch log, checkpoint, and similarities.
    Train(TrainArgs),
    /// Evaluate a checkpoint on test features (ZSL and GZSL metrics).
    Eval(EvalArgs),
    /// Train and evaluate once per transfer-loss weight.
    Sweep(SweepArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec (`key=value` lines); defaults are used when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the seed given in the generator file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    /// Class semantic matrix file.
    #[arg(long)]
    pub semantics: PathBuf,
    /// Split file naming source and target classes.
    #[arg(long)]
    pub splits: PathBuf,
    /// Ridge regularizer; overrides the config file.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Config file (`key=value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Training data locations. Individual flags override files inside `--data`.
#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory holding features.bin, semantics.bin, labels.txt, splits.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training feature matrix file.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Class semantic matrix file.
    #[arg(long)]
    pub semantics: Option<PathBuf>,
    /// Training labels, one class id per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Split file.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

impl DatasetArgs {
    fn paths(&self) -> Result<DatasetPaths> {
        let defaults = self.data.as_ref().map(DatasetPaths::in_dir);
        let pick = |given: &Option<PathBuf>, default: Option<&PathBuf>, flag: &str| {
            given
                .clone()
                .or_else(|| default.cloned())
                .ok_or_else(|| Error::Config(format!("missing --{flag} (or --data)")))
        };
        Ok(DatasetPaths {
            features: pick(&self.features, defaults.as_ref().map(|d| &d.features), "features")?,
            semantics: pick(&self.semantics, defaults.as_ref().map(|d| &d.semantics), "semantics")?,
            labels: pick(&self.labels, defaults.as_ref().map(|d| &d.labels), "labels")?,
            splits: pick(&self.splits, defaults.as_ref().map(|d| &d.splits), "splits")?,
        })
    }
}

/// Training hyper-parameters. Flags override the config file, which overrides defaults.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file (`key=value` lines, `#` comments).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed for initialization, shuffling, and hold-out.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transfer-loss weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Ridge regularizer for class similarities.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per mini-batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Any other config key, as KEY=VALUE. Repeatable; applied before the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&read_text(path)?)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test feature matrix file.
    #[arg(long)]
    pub features: PathBuf,
    /// Test labels, one class id per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Class semantic matrix file.
    #[arg(long)]
    pub semantics: PathBuf,
    /// Split file.
    #[arg(long)]
    pub splits: PathBuf,
    /// Also write per-image contrastive values to scores.csv.
    #[arg(long)]
    pub export_scores: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Test feature matrix file.
    #[arg(long)]
    pub test_features: PathBuf,
    /// Test labels, one class id per line.
    #[arg(long)]
    pub test_labels: PathBuf,
    /// Comma-separated transfer-loss weights.
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1,1")]
    pub alphas: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the random problems.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random problems per transfer-loss weight.
    #[arg(long, default_value_t = 10)]
    pub configs: usize,
    /// Optional output directory for a gradcheck.txt report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Tracks files written by one invocation and removes them unless committed.
struct OutputGuard {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            committed: false,
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `argv` (program name first), runs the subcommand, and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                    eprintln!("error[usage]: {first}");
                    2
                }
            };
        }
    };
    let mut stdout = std::io::stdout();
    match execute(&cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(CliFailure::Lib(e)) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            1
        }
        Err(CliFailure::Gradcheck(err)) => {
            eprintln!("error[gradcheck]: max relative error {err:e} exceeds {GRADCHECK_TOLERANCE:e}");
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug)]
enum CliFailure {
    Lib(Error),
    Gradcheck(f64),
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        CliFailure::Lib(e)
    }
}

fn stdout_line(out: &mut impl Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

fn execute(command: &Command, out: &mut impl Write) -> std::result::Result<(), CliFailure> {
    match command {
        Command::Synth(a) => synth(a, out)?,
        Command::Similarity(a) => similarity(a, out)?,
        Command::Train(a) => train_cmd(a, out)?,
        Command::Eval(a) => eval_cmd(a, out)?,
        Command::Sweep(a) => sweep(a, out)?,
        Command::Gradcheck(a) => gradcheck(a, out)?,
    }
    Ok(())
}

fn synth(a: &SynthArgs, out: &mut impl Write) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticSpec::from_text(&read_text(p)?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    let mut guard = OutputGuard::new(&a.out)?;
    let d = &data.dataset;
    let names = DatasetPaths::in_dir("");
    let name = |p: &Path| p.to_string_lossy().into_owned();
    guard.write(&name(&names.features), encode_matrix(FEATURE_MAGIC, d.features()))?;
    guard.write(&name(&names.semantics), encode_matrix(FEATURE_MAGIC, d.semantics()))?;
    guard.write(&name(&names.labels), labels_text(d.labels()))?;
    guard.write(&name(&names.splits), format_splits(d.splits()))?;
    guard.write("test_features.bin", encode_matrix(FEATURE_MAGIC, &data.test.features))?;
    guard.write("test_labels.txt", labels_text(&data.test.labels))?;
    guard.write("spec.txt", spec.to_text())?;
    guard.commit();
    stdout_line(
        out,
        &format!(
            "wrote {} training and {} test rows ({} source, {} target classes) to {}",
            d.len(),
            data.test.len(),
            d.splits().source.len(),
            d.splits().target.len(),
            a.out.display()
        ),
    );
    Ok(())
}

fn labels_text(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

fn similarity(a: &SimilarityArgs, out: &mut impl Write) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_text(&read_text(path)?)?;
    }
    if let Some(beta) = a.beta {
        cfg.beta = beta;
    }
    cfg.validate()?;
    let semantics = read_matrix(&a.semantics)?;
    let splits = read_splits(&a.splits)?;
    splits.validate(semantics.rows())?;
    let s = class_similarity(&semantics, &splits.source, &splits.target, cfg.beta)?;
    let mut guard = OutputGuard::new(&a.out)?;
    guard.write("similarity.csv", similarity_csv(&s))?;
    guard.write("config.txt", cfg.to_text())?;
    guard.commit();
    stdout_line(
        out,
        &format!("wrote {}x{} similarity matrix", s.values.rows(), s.values.cols()),
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let cfg = a.config.resolve()?;
    let dataset = load_dataset(&a.data.paths()?)?;
    let mut guard = OutputGuard::new(&a.out)?;
    guard.write("config.txt", cfg.to_text())?;
    let report = train(&dataset, &cfg)?;
    guard.write("train_log.csv", report.log_csv())?;
    guard.write("checkpoint.tcnp", encode_checkpoint(&report.params))?;
    guard.write("similarity.csv", similarity_csv(&report.similarity))?;
    guard.commit();
    let last = report.records.last().expect("at least one epoch");
    stdout_line(
        out,
        &format!(
            "trained {} epochs; final loss {:.6} (l_d {:.6}, l_t {:.6}); kept epoch {}",
            report.records.len(),
            last.total,
            last.l_d,
            last.l_t,
            report.best_epoch
        ),
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let semantics = read_matrix(&a.semantics)?;
    let splits = read_splits(&a.splits)?;
    splits.validate(semantics.rows())?;
    let features = read_matrix(&a.features)?;
    let labels = read_labels(&a.labels)?;
    if let Some(&c) = labels.iter().find(|&&c| c >= semantics.rows()) {
        return Err(Error::UnknownClass(c));
    }
    let logits = contrast_logits(&params, &features, &semantics)?;
    let metrics = metrics_from_scores(&logits, &labels, &splits.source, &splits.target)?;
    let mut guard = OutputGuard::new(&a.out)?;
    guard.write("metrics.txt", metrics.to_kv())?;
    guard.write("metrics.json", metrics.to_json())?;
    if a.export_scores {
        guard.write("scores.csv", scores_csv(&logits.map(sigmoid_scalar), &labels))?;
    }
    guard.commit();
    stdout_line(
        out,
        &format!(
            "ts={:.2} tr={:.2} h={:.2} zsl_acc={:.2}",
            metrics.ts, metrics.tr, metrics.h, metrics.zsl_acc
        ),
    );
    Ok(())
}

fn sweep(a: &SweepArgs, out: &mut impl Write) -> Result<()> {
    let cfg = a.config.resolve()?;
    let dataset = load_dataset(&a.data.paths()?)?;
    let test = load_test_set(&a.test_features, &a.test_labels)?;
    let mut guard = OutputGuard::new(&a.out)?;
    guard.write("config.txt", cfg.to_text())?;
    let points = alpha_sweep(&dataset, &test, &cfg, &a.alphas)?;
    guard.write("sweep.csv", sweep_csv(&points))?;
    guard.commit();
    for p in &points {
        stdout_line(
            out,
            &format!(
                "alpha={} ts={:.2} tr={:.2} h={:.2} zsl_acc={:.2}",
                p.alpha, p.metrics.ts, p.metrics.tr, p.metrics.h, p.metrics.zsl_acc
            ),
        );
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &mut impl Write) -> std::result::Result<(), CliFailure> {
    if a.configs == 0 {
        return Err(Error::Config("--configs must be at least 1".into()).into());
    }
    let summary = gradcheck_suite(a.seed, a.configs)?;
    let report = format!(
        "cases={}\nmax_rel_err={:e}\nworst_case_seed={}\nworst_tensor={}\n",
        summary.cases, summary.max_rel_err, summary.worst_case_seed, summary.worst_tensor
    );
    if summary.max_rel_err > GRADCHECK_TOLERANCE {
        return Err(CliFailure::Gradcheck(summary.max_rel_err));
    }
    if let Some(dir) = &a.out {
        let mut guard = OutputGuard::new(dir)?;
        guard.write("gradcheck.txt", &report)?;
        guard.commit();
    }
    stdout_line(out, &format!("max rel err {:e} over {} cases", summary.max_rel_err, summary.cases));
    Ok(())
}
