//! The `rlp` command-line tool: argument parsing, run directories,
//! manifests, ablation grids, verification and image dumps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::experiment::{DatasetName, DatasetSpec, Experiment, ExperimentFile, ModelOverrides, TrainOverrides};
use crate::linalg::DenseMatrix;
use crate::model::{self, ModelParams};
use crate::theory::{self, CheckStatus};
use crate::trainer::{self, LossKind, MetricsRecord, ProbeMode, TrainOutcome, UpdateMode};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHECKS_FILE: &str = "checks.toml";

#[derive(Debug, Parser)]
#[command(name = "rlp", version, about = "Train and evaluate networks with the random linear projection loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    GenData {
        #[arg(long, value_enum)]
        name: DatasetName,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Jitter for the moons data.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment.
    Train(RunArgs),
    /// Run every cell of an ablation grid.
    Ablate(RunArgs),
    /// Run the numerical property checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump original and reconstructed test images side by side.
    Reconstruct {
        /// Experiment whose dataset section selects the images.
        #[arg(long)]
        config: PathBuf,
        /// Run directories holding per-epoch checkpoints, one image row each.
        #[arg(long = "run-dir", required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 50])]
        epochs: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent ablation cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum)]
    pub update_mode: Option<UpdateMode>,
    #[arg(long, value_enum)]
    pub probe_mode: Option<ProbeMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub rlp: String,
    pub checkpoint_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            rlp: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: model::CHECKPOINT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub versions: Versions,
    pub started: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<String>,
    pub config: toml::Value,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path, seeds: Vec<u64>, config_hash: String, config: toml::Value) -> Self {
        Self {
            command: command.to_string(),
            output_dir: out.to_path_buf(),
            seeds,
            config_hash,
            versions: Versions::default(),
            started: timestamp(),
            finished: None,
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished = Some(timestamp());
        self.write(dir)
    }
}

fn timestamp() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn to_value<T: Serialize>(v: &T) -> toml::Value {
    toml::Value::try_from(v).expect("config serializes")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Command-line flags layered over a config file.
fn apply_flags(file: &mut ExperimentFile, args: &RunArgs) {
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(m) = args.update_mode {
        file.train.update_mode = Some(m);
    }
    if let Some(m) = args.probe_mode {
        file.train.probe_mode = Some(m);
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("model_epoch{epoch}.ckpt")
}

/// Builds the data and network for `exp`, trains, and writes metrics,
/// config and checkpoints into `out`. Relative data paths resolve against
/// `base`.
pub fn run_experiment(exp: &Experiment, base: &Path, out: &Path) -> Result<TrainOutcome> {
    create_dir(out)?;
    let (train_ds, test_ds) = exp.dataset.build(exp.seed, base)?;
    let net = exp.model.build(train_ds.feature_dim(), exp.seed);
    let hash = exp.hash();
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, exp.to_toml()).map_err(|e| Error::io(&config_path, e))?;

    let mut save = |epoch: usize, params: &ModelParams| -> Result<()> {
        if exp.checkpoint_epochs.contains(&epoch) {
            model::save_checkpoint(params, &out.join(checkpoint_name(epoch)))?;
        }
        Ok(())
    };
    let outcome = trainer::train(&exp.train, net, &train_ds, Some(&test_ds), Some(&hash), Some(&mut save))?;
    trainer::write_metrics_csv(&outcome.records, &out.join(METRICS_FILE))?;
    model::save_checkpoint(&outcome.model, &out.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

pub fn cmd_train(args: &RunArgs) -> Result<TrainOutcome> {
    let mut file = ExperimentFile::load(&args.config)?;
    apply_flags(&mut file, args);
    let exp = file.resolve()?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("train", &args.out, vec![exp.seed], exp.hash(), to_value(&exp));
    manifest.write(&args.out)?;
    let outcome = run_experiment(&exp, &base_dir(&args.config), &args.out)?;
    manifest.finish(&args.out)?;
    Ok(outcome)
}

pub fn cmd_gen_data(name: DatasetName, n: usize, seed: u64, noise: f64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let ds = match name {
        DatasetName::Linear => data::gen_linear(n, seed),
        DatasetName::Nonlinear => data::gen_nonlinear(n, seed),
        DatasetName::Moons => data::gen_moons(n, noise, seed),
        other => {
            return Err(Error::Config(format!("{other:?} is not a synthetic dataset")));
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ds.write_csv(out)
}

/// Axes of an ablation. Every non-empty axis is crossed with the others and
/// with `losses`; an all-empty grid has no cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub losses: Vec<LossKind>,
    #[serde(default)]
    pub train_counts: Vec<usize>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFile {
    #[serde(default)]
    pub seed: u64,
    pub grid: Grid,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub loss: LossKind,
    pub train_count: Option<usize>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub experiment: ExperimentFile,
}

impl AblationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.grid;
        if g.train_counts.is_empty() && g.gammas.is_empty() && g.betas.is_empty() {
            return Vec::new();
        }
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut cells = Vec::new();
        for &loss in &g.losses {
            for n in axis(&g.train_counts) {
                for gamma in axis(&g.gammas) {
                    for beta in axis(&g.betas) {
                        let mut name = loss.name().to_string();
                        let mut dataset = self.dataset.clone();
                        if let Some(n) = n {
                            name += &format!("_n{n}");
                            dataset.train_count = Some(n);
                        }
                        if let Some(v) = gamma {
                            name += &format!("_gamma{v}");
                            dataset.gamma = Some(v);
                        }
                        if let Some(v) = beta {
                            name += &format!("_beta{v}");
                            dataset.beta = Some(v);
                        }
                        let train = TrainOverrides {
                            loss: Some(loss),
                            ..self.train
                        };
                        cells.push(Cell {
                            name,
                            loss,
                            train_count: n,
                            gamma,
                            beta,
                            experiment: ExperimentFile {
                                seed: self.seed,
                                checkpoint_epochs: Vec::new(),
                                dataset,
                                model: self.model,
                                train,
                            },
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub loss: LossKind,
    pub train_count: Option<usize>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_rlp: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub wall_seconds: f64,
    pub config_hash: String,
}

impl SummaryRow {
    fn new(cell: &Cell, last: &MetricsRecord) -> Self {
        Self {
            cell: cell.name.clone(),
            loss: cell.loss,
            train_count: cell.train_count,
            gamma: cell.gamma,
            beta: cell.beta,
            epoch: last.epoch,
            train_loss: last.train_loss,
            test_mse: last.test_mse,
            test_rlp: last.test_rlp,
            accuracy: last.accuracy,
            macro_f1: last.macro_f1,
            wall_seconds: last.wall_seconds,
            config_hash: last.config_hash.clone(),
        }
    }

    pub fn record(&self) -> MetricsRecord {
        MetricsRecord {
            epoch: self.epoch,
            train_loss: self.train_loss,
            test_mse: self.test_mse,
            test_rlp: self.test_rlp,
            accuracy: self.accuracy,
            macro_f1: self.macro_f1,
            wall_seconds: self.wall_seconds,
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    if rows.is_empty() {
        w.write_record([
            "cell", "loss", "train_count", "gamma", "beta", "epoch", "train_loss", "test_mse", "test_rlp",
            "accuracy", "macro_f1", "wall_seconds", "config_hash",
        ])
        .map_err(fmt)?;
    }
    for row in rows {
        w.serialize(row).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every cell, each writing `<cell>.csv` into `out`, then the summary
/// of final records in cell order.
pub fn run_ablation(file: &AblationFile, base: &Path, out: &Path, jobs: usize) -> Result<Vec<SummaryRow>> {
    create_dir(out)?;
    let cells = file.cells();
    let experiments = cells
        .iter()
        .map(|c| c.experiment.resolve())
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .zip(&experiments)
            .map(|(cell, exp)| -> Result<SummaryRow> {
                let (train_ds, test_ds) = exp.dataset.build(exp.seed, base)?;
                let net = exp.model.build(train_ds.feature_dim(), exp.seed);
                let hash = exp.hash();
                let outcome = trainer::train(&exp.train, net, &train_ds, Some(&test_ds), Some(&hash), None)?;
                trainer::write_metrics_csv(&outcome.records, &out.join(format!("{}.csv", cell.name)))?;
                let last = outcome.records.last().expect("final epoch is always recorded");
                Ok(SummaryRow::new(cell, last))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_summary(&rows, &out.join(SUMMARY_FILE))?;
    Ok(rows)
}

pub fn cmd_ablate(args: &RunArgs) -> Result<Vec<SummaryRow>> {
    let mut file = AblationFile::load(&args.config)?;
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(m) = args.update_mode {
        file.train.update_mode = Some(m);
    }
    if let Some(m) = args.probe_mode {
        file.train.probe_mode = Some(m);
    }
    create_dir(&args.out)?;
    let hash = trainer::hash_text(&toml::to_string(&file).expect("ablation serializes"));
    let mut manifest = RunManifest::new("ablate", &args.out, vec![file.seed], hash, to_value(&file));
    manifest.write(&args.out)?;
    let rows = run_ablation(&file, &base_dir(&args.config), &args.out, args.jobs)?;
    manifest.finish(&args.out)?;
    Ok(rows)
}

/// Runs the property checks, writing their reports when `out` is given.
/// Any failing check is a verification error.
pub fn cmd_verify(seed: u64, out: Option<&Path>) -> Result<Vec<theory::CheckReport>> {
    let reports = theory::run_all(seed)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        theory::write_reports(&reports, &dir.join(CHECKS_FILE))?;
    }
    for r in &reports {
        println!(
            "{:<26} {:>6} instances {:>4} violations  worst margin {:>11.3e}  {:?}",
            r.name, r.instances, r.violations, r.worst_margin, r.status
        );
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| r.status == CheckStatus::Fail)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(Error::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

/// Gray levels of one image: colour images are averaged over their three
/// planes first.
fn gray_image(row: &[f64]) -> Result<(usize, Vec<f64>)> {
    let plane = if row.len() % 3 == 0 && is_square(row.len() / 3) && !is_square(row.len()) {
        let n = row.len() / 3;
        (0..n).map(|i| (row[i] + row[i + n] + row[i + 2 * n]) / 3.0).collect()
    } else {
        row.to_vec()
    };
    if !is_square(plane.len()) {
        return Err(Error::Config(format!("{} pixels do not form a square image", row.len())));
    }
    Ok(((plane.len() as f64).sqrt().round() as usize, plane))
}

fn is_square(n: usize) -> bool {
    let s = (n as f64).sqrt().round() as usize;
    s * s == n
}

/// Plain (P2) graymap with one band per matrix, `count` images across.
pub fn write_pgm_grid(path: &Path, bands: &[&DenseMatrix], count: usize) -> Result<()> {
    let first = bands.first().ok_or_else(|| Error::Config("no images to write".into()))?;
    let count = count.min(first.rows());
    let (side, _) = gray_image(first.row(0))?;
    let (width, height) = (side * count, side * bands.len());
    let mut pixels = vec![0u8; width * height];
    for (b, m) in bands.iter().enumerate() {
        for i in 0..count.min(m.rows()) {
            let (s, plane) = gray_image(m.row(i))?;
            if s != side {
                return Err(Error::shape("write_pgm_grid", format!("image side {s} vs {side}")));
            }
            for (p, v) in plane.iter().enumerate() {
                let (y, x) = (b * side + p / side, i * side + p % side);
                pixels[y * width + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let mut text = format!("P2\n{width} {height}\n255\n");
    for line in pixels.chunks(width) {
        let row: Vec<String> = line.iter().map(u8::to_string).collect();
        text += &row.join(" ");
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a P2 file back into its width, height and gray levels.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some("P2") {
        return Err(Error::Format(format!("{}: not a plain graymap", path.display())));
    }
    let bad = || Error::Format(format!("{}: malformed graymap", path.display()));
    let mut nums = tokens.map(|t| t.parse::<usize>().map_err(|_| bad()));
    let w = nums.next().ok_or_else(bad)??;
    let h = nums.next().ok_or_else(bad)??;
    let _max = nums.next().ok_or_else(bad)??;
    let px = nums.map(|r| r.map(|v| v as u8)).collect::<Result<Vec<u8>>>()?;
    if px.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, px))
}

/// For each epoch, a graymap with the first `count` test images on top and
/// one band of reconstructions per run directory below.
pub fn reconstruct(
    images: &Dataset,
    run_dirs: &[PathBuf],
    epochs: &[usize],
    count: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let count = count.min(images.len());
    let originals = images.subset(&(0..count).collect::<Vec<_>>());
    let mut written = Vec::new();
    for &epoch in epochs {
        let mut bands = vec![originals.labels.clone()];
        for dir in run_dirs {
            let params = model::load_checkpoint(&dir.join(checkpoint_name(epoch)))?;
            bands.push(model::predict(&params, &originals.features)?);
        }
        let path = out.join(format!("recon_epoch{epoch}.pgm"));
        write_pgm_grid(&path, &bands.iter().collect::<Vec<_>>(), count)?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_reconstruct(config: &Path, run_dirs: &[PathBuf], epochs: &[usize], count: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let exp = ExperimentFile::load(config)?.resolve()?;
    let (_, test) = exp.dataset.build(exp.seed, &base_dir(config))?;
    reconstruct(&test, run_dirs, epochs, count, out)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { name, n, seed, noise, out } => cmd_gen_data(name, n, seed, noise, &out),
        Command::Train(args) => {
            let outcome = cmd_train(&args)?;
            if let Some(last) = outcome.records.last() {
                println!(
                    "epoch {}  test mse {}  test rlp {}",
                    last.epoch,
                    fmt_opt(last.test_mse),
                    fmt_opt(last.test_rlp)
                );
            }
            Ok(())
        }
        Command::Ablate(args) => {
            let rows = cmd_ablate(&args)?;
            for r in &rows {
                println!("{:<32} test mse {}", r.cell, fmt_opt(r.test_mse));
            }
            Ok(())
        }
        Command::Verify { seed, out } => cmd_verify(seed, out.as_deref()).map(|_| ()),
        Command::Reconstruct { config, run_dirs, epochs, count, out } => {
            for p in cmd_reconstruct(&config, &run_dirs, &epochs, count, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
