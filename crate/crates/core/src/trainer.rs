//! Training loops for the hyperplane losses and the baselines, plus
//! evaluation and metrics output.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batching::{self, BatchSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::loss::{self, LossOutput, PreparedBatches};
use crate::model::{self, GradientBundle, ModelParams};
use crate::optim::{OptimizerSpec, OptimizerState};
use crate::rng::{self, Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    MseL2,
    MseMixup,
    Rlp,
    RlpMixup,
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::MseL2 => "mse_l2",
            LossKind::MseMixup => "mse_mixup",
            LossKind::Rlp => "rlp",
            LossKind::RlpMixup => "rlp_mixup",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn is_rlp(self) -> bool {
        matches!(self, LossKind::Rlp | LossKind::RlpMixup)
    }

    pub fn uses_mixup(self) -> bool {
        matches!(self, LossKind::MseMixup | LossKind::RlpMixup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One optimizer step per epoch on the batch-averaged loss.
    PerEpoch,
    /// One optimizer step after every batch.
    PerBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Fresh probe per batch per epoch.
    Resample,
    /// One probe per batch, drawn once.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    /// Rows per hyperplane fit (M).
    pub batch_size: usize,
    /// Number of fixed batches (K).
    pub batch_count: usize,
    /// Minibatch size of the baselines.
    pub minibatch: usize,
    pub mixup_psi: f64,
    pub update_mode: UpdateMode,
    pub probe_mode: ProbeMode,
    pub seed: u64,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// Batch size and count for the test-set hyperplane metric.
    pub metric_batch_size: usize,
    pub metric_batch_count: usize,
    /// Report accuracy and macro-F1 from argmax of outputs and labels.
    pub classification: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Rlp,
            optimizer: OptimizerSpec::default(),
            epochs: 200,
            batch_size: 7,
            batch_count: 1000,
            minibatch: 64,
            mixup_psi: 0.25,
            update_mode: UpdateMode::PerEpoch,
            probe_mode: ProbeMode::Resample,
            seed: 0,
            eval_every: 1,
            metric_batch_size: 7,
            metric_batch_count: 1000,
            classification: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss.is_rlp() && (self.batch_size == 0 || self.batch_count == 0) {
            return Err(Error::Config("hyperplane losses need batch_size and batch_count ≥ 1".into()));
        }
        if self.loss.uses_mixup() && (self.mixup_psi.is_nan() || self.mixup_psi <= 0.0) {
            return Err(Error::Config(format!("mixup_psi must be positive, got {}", self.mixup_psi)));
        }
        if !self.loss.is_rlp() && self.minibatch == 0 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the serialized configuration, hex encoded.
    pub fn hash(&self) -> String {
        hash_text(&toml::to_string(self).expect("config serializes"))
    }
}

pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_rlp: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub wall_seconds: f64,
    pub config_hash: String,
}

pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(row, rec)| {
            rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Accuracy and macro-averaged F1 from row-wise argmax of `outputs` and
/// `labels`. Classes absent from both predictions and labels are skipped.
pub fn classification_scores(outputs: &DenseMatrix, labels: &DenseMatrix) -> (f64, f64) {
    let c = labels.cols();
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    };
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fneg = vec![0usize; c];
    let mut correct = 0;
    for r in 0..labels.rows() {
        let (p, t) = (argmax(outputs.row(r)), argmax(labels.row(r)));
        if p == t {
            correct += 1;
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let mut f1_sum = 0.0;
    let mut classes = 0;
    for k in 0..c {
        if tp[k] + fp[k] + fneg[k] == 0 {
            continue;
        }
        classes += 1;
        f1_sum += 2.0 * tp[k] as f64 / (2 * tp[k] + fp[k] + fneg[k]) as f64;
    }
    let n = labels.rows().max(1) as f64;
    (correct as f64 / n, f1_sum / classes.max(1) as f64)
}

/// Test-set evaluation with the hyperplane-metric batches prepared once.
#[derive(Debug, Clone)]
pub struct Evaluator {
    test: Dataset,
    prepared: Option<PreparedBatches>,
    seed: u64,
    classification: bool,
}

impl Evaluator {
    /// The hyperplane metric is omitted when the test set is too small for
    /// even one batch of size `m`; `k` is capped at the number of distinct
    /// batches.
    pub fn new(test: &Dataset, m: usize, k: usize, seed: u64, classification: bool) -> Result<Self> {
        let prepared = if m >= 1 && k >= 1 && test.len() >= m {
            let cap = batching::binomial(test.len(), m).unwrap_or(u128::MAX);
            let k = (k as u128).min(cap) as usize;
            let mut r = rng::stream(seed, Purpose::Metric);
            let bs = batching::balanced_batches_with(test.len(), m, k, seed, &mut r)?;
            Some(PreparedBatches::new(test, bs)?)
        } else {
            None
        };
        Ok(Self {
            test: test.clone(),
            prepared,
            seed,
            classification,
        })
    }

    pub fn evaluate(&self, model: &ModelParams) -> Result<MetricsRecord> {
        let mut rec = MetricsRecord {
            epoch: 0,
            train_loss: None,
            test_mse: None,
            test_rlp: None,
            accuracy: None,
            macro_f1: None,
            wall_seconds: 0.0,
            config_hash: String::new(),
        };
        if self.test.is_empty() {
            return Ok(rec);
        }
        let h = model::predict(model, &self.test.features)?;
        rec.test_mse = Some(loss::mse(&h, &self.test.labels)?.value);
        if let Some(p) = &self.prepared {
            rec.test_rlp = Some(loss::rlp_metric_prepared(model, &self.test, p, self.seed)?);
        }
        if self.classification {
            let (acc, f1) = classification_scores(&h, &self.test.labels);
            rec.accuracy = Some(acc);
            rec.macro_f1 = Some(f1);
        }
        Ok(rec)
    }
}

/// Test MSE, hyperplane metric and (for classification) accuracy/F1.
pub fn evaluate(
    model: &ModelParams,
    test: &Dataset,
    m: usize,
    k: usize,
    seed: u64,
    classification: bool,
) -> Result<MetricsRecord> {
    Evaluator::new(test, m, k, seed, classification)?.evaluate(model)
}

/// Called after every epoch with the epoch number (1-based) and the
/// current parameters.
pub type EpochHook<'a> = dyn FnMut(usize, &ModelParams) -> Result<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub records: Vec<MetricsRecord>,
    pub optimizer_steps: u64,
}

struct Session<'a> {
    cfg: &'a TrainConfig,
    evaluator: Option<Evaluator>,
    records: Vec<MetricsRecord>,
    started: Instant,
    hash: String,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a TrainConfig, test: Option<&Dataset>, hash: Option<&str>) -> Result<Self> {
        cfg.validate()?;
        let evaluator = test
            .map(|t| {
                Evaluator::new(
                    t,
                    cfg.metric_batch_size,
                    cfg.metric_batch_count,
                    cfg.seed,
                    cfg.classification,
                )
            })
            .transpose()?;
        Ok(Self {
            cfg,
            evaluator,
            records: Vec::new(),
            started: Instant::now(),
            hash: hash.map_or_else(|| cfg.hash(), str::to_string),
        })
    }

    fn record(&mut self, epoch: usize, train_loss: Option<f64>, model: &ModelParams) -> Result<()> {
        let due = epoch == 0 || epoch % self.cfg.eval_every == 0 || epoch == self.cfg.epochs;
        if !due {
            return Ok(());
        }
        let mut rec = match &self.evaluator {
            Some(e) => e.evaluate(model)?,
            None => MetricsRecord {
                epoch,
                train_loss: None,
                test_mse: None,
                test_rlp: None,
                accuracy: None,
                macro_f1: None,
                wall_seconds: 0.0,
                config_hash: String::new(),
            },
        };
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.wall_seconds = self.started.elapsed().as_secs_f64();
        rec.config_hash = self.hash.clone();
        self.records.push(rec);
        Ok(())
    }
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

fn check_model(model: &ModelParams, ds: &Dataset) -> Result<()> {
    if model.input_dim() != ds.feature_dim() || model.output_dim() != ds.label_dim() {
        return Err(Error::shape(
            "train",
            format!(
                "model maps {}→{}, data is {}→{}",
                model.input_dim(),
                model.output_dim(),
                ds.feature_dim(),
                ds.label_dim()
            ),
        ));
    }
    Ok(())
}

/// Trains `model` on `train` with the loss named in `cfg`, evaluating on
/// `test` when given. `run_hash` overrides the config hash stamped on every
/// record.
pub fn train(
    cfg: &TrainConfig,
    model: ModelParams,
    train: &Dataset,
    test: Option<&Dataset>,
    run_hash: Option<&str>,
    hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainOutcome> {
    check_model(&model, train)?;
    let mut session = Session::new(cfg, test, run_hash)?;
    let mut noop = |_: usize, _: &ModelParams| Ok(());
    let hook: &mut EpochHook<'_> = match hook {
        Some(h) => h,
        None => &mut noop,
    };
    let (model, steps) = match cfg.loss {
        LossKind::Rlp => run_rlp(cfg, model, train, &mut session, hook)?,
        LossKind::RlpMixup => run_rlp_mixup(cfg, model, train, &mut session, hook)?,
        _ => run_baseline(cfg, model, train, &mut session, hook)?,
    };
    Ok(TrainOutcome {
        model,
        records: session.records,
        optimizer_steps: steps,
    })
}

/// Hyperplane-loss training over a fixed balanced batch set.
pub fn train_rlp(
    cfg: &TrainConfig,
    model: ModelParams,
    train_ds: &Dataset,
    test: Option<&Dataset>,
) -> Result<TrainOutcome> {
    expect_kind(cfg, &[LossKind::Rlp])?;
    train(cfg, model, train_ds, test, None, None)
}

/// Minibatch training with MSE, MSE + weight decay, mixup MSE or
/// cross-entropy.
pub fn train_baseline(
    cfg: &TrainConfig,
    model: ModelParams,
    train_ds: &Dataset,
    test: Option<&Dataset>,
) -> Result<TrainOutcome> {
    expect_kind(
        cfg,
        &[LossKind::Mse, LossKind::MseL2, LossKind::MseMixup, LossKind::CrossEntropy],
    )?;
    train(cfg, model, train_ds, test, None, None)
}

/// Hyperplane-loss training on mixed pairs of batches from two batch sets.
pub fn train_rlp_mixup(
    cfg: &TrainConfig,
    model: ModelParams,
    train_ds: &Dataset,
    test: Option<&Dataset>,
) -> Result<TrainOutcome> {
    expect_kind(cfg, &[LossKind::RlpMixup])?;
    train(cfg, model, train_ds, test, None, None)
}

fn expect_kind(cfg: &TrainConfig, kinds: &[LossKind]) -> Result<()> {
    if kinds.contains(&cfg.loss) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "loss {} is not handled by this trainer",
            cfg.loss.name()
        )))
    }
}

fn batch_gradient(
    model: &ModelParams,
    prepared: &PreparedBatches,
    j: usize,
    probe: &[f64],
) -> Result<GradientBundle> {
    let cache = model::forward(model, &prepared.features[j])?;
    let out = loss::rlp_with_projection(
        &prepared.projections[j].operator,
        &prepared.labels[j],
        cache.output(),
        probe,
    )?;
    let mut g = model::backward(model, &cache, &out.dl_dh)?;
    g.loss = out.value;
    Ok(g)
}

/// Averages per-batch bundles in index order.
fn average(model: &ModelParams, bundles: &[GradientBundle]) -> Result<GradientBundle> {
    let mut acc = GradientBundle::zeros_like(model);
    for b in bundles {
        acc.accumulate(b)?;
    }
    acc.scale(1.0 / bundles.len().max(1) as f64);
    Ok(acc)
}

fn run_rlp(
    cfg: &TrainConfig,
    mut model: ModelParams,
    train: &Dataset,
    session: &mut Session,
    hook: &mut EpochHook<'_>,
) -> Result<(ModelParams, u64)> {
    let bs = batching::balanced_batches(train.len(), cfg.batch_size, cfg.batch_count, cfg.seed)?;
    let prepared = PreparedBatches::new(train, bs)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let mut probe_rng = rng::stream(cfg.seed, Purpose::Probe);
    let draw_all = |r: &mut StreamRng| -> Vec<usize> {
        prepared
            .batch_set
            .batches
            .iter()
            .map(|b| loss::draw_probe(r, train.len(), b))
            .collect()
    };
    let frozen = match cfg.probe_mode {
        ProbeMode::Frozen => Some(draw_all(&mut probe_rng)),
        ProbeMode::Resample => None,
    };
    session.record(0, None, &model)?;
    for epoch in 1..=cfg.epochs {
        let probes = frozen.clone().unwrap_or_else(|| draw_all(&mut probe_rng));
        let train_loss = match cfg.update_mode {
            UpdateMode::PerEpoch => {
                let bundles = (0..prepared.len())
                    .into_par_iter()
                    .map(|j| {
                        batch_gradient(&model, &prepared, j, train.features.row(probes[j]))
                            .map_err(|e| with_context(e, epoch, j))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let g = average(&model, &bundles)?;
                opt.step(&mut model, &g)
                    .map_err(|e| with_context(e, epoch, prepared.len()))?;
                g.loss
            }
            UpdateMode::PerBatch => {
                let mut total = 0.0;
                for (j, &probe) in probes.iter().enumerate() {
                    let g = batch_gradient(&model, &prepared, j, train.features.row(probe))
                        .map_err(|e| with_context(e, epoch, j))?;
                    total += g.loss;
                    opt.step(&mut model, &g).map_err(|e| with_context(e, epoch, j))?;
                }
                total / prepared.len() as f64
            }
        };
        session.record(epoch, Some(train_loss), &model)?;
        hook(epoch, &model)?;
    }
    Ok((model, opt.steps()))
}

fn mixup_gradient(
    model: &ModelParams,
    a: (&DenseMatrix, &DenseMatrix),
    b: (&DenseMatrix, &DenseMatrix),
    lambda: f64,
) -> Result<Option<GradientBundle>> {
    let Some(eval) = loss::rlp_mixup_batch(a.0, a.1, b.0, b.1, lambda, model)? else {
        return Ok(None);
    };
    let mut g = model::backward(model, &eval.cache, &eval.loss.dl_dh)?;
    g.loss = eval.loss.value;
    Ok(Some(g))
}

fn beta(psi: f64) -> Result<Beta<f64>> {
    Beta::new(psi, psi).map_err(|e| Error::Config(format!("Beta({psi}, {psi}): {e}")))
}

fn run_rlp_mixup(
    cfg: &TrainConfig,
    mut model: ModelParams,
    train: &Dataset,
    session: &mut Session,
    hook: &mut EpochHook<'_>,
) -> Result<(ModelParams, u64)> {
    let n = train.len();
    let gen = |lane| -> Result<BatchSet> {
        let mut r = rng::stream_lane(cfg.seed, Purpose::Batching, lane);
        batching::balanced_batches_with(n, cfg.batch_size, cfg.batch_count, cfg.seed, &mut r)
    };
    let (set_a, set_b) = (gen(0)?, gen(1)?);
    let rows = |bs: &BatchSet| -> Vec<(DenseMatrix, DenseMatrix)> {
        bs.batches
            .iter()
            .map(|idx| (train.features.select_rows(idx), train.labels.select_rows(idx)))
            .collect()
    };
    let (rows_a, rows_b) = (rows(&set_a), rows(&set_b));
    let dist = beta(cfg.mixup_psi)?;
    let mut lambda_rng = rng::stream(cfg.seed, Purpose::Mixup);
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    session.record(0, None, &model)?;
    for epoch in 1..=cfg.epochs {
        let lambdas: Vec<f64> = (0..rows_a.len()).map(|_| dist.sample(&mut lambda_rng)).collect();
        let train_loss = match cfg.update_mode {
            UpdateMode::PerEpoch => {
                let bundles = (0..rows_a.len())
                    .into_par_iter()
                    .map(|j| {
                        let (xa, ya) = &rows_a[j];
                        let (xb, yb) = &rows_b[j];
                        mixup_gradient(&model, (xa, ya), (xb, yb), lambdas[j])
                            .map_err(|e| with_context(e, epoch, j))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let kept: Vec<GradientBundle> = bundles.into_iter().flatten().collect();
                let g = average(&model, &kept)?;
                opt.step(&mut model, &g)
                    .map_err(|e| with_context(e, epoch, rows_a.len()))?;
                g.loss
            }
            UpdateMode::PerBatch => {
                let (mut total, mut count) = (0.0, 0usize);
                for j in 0..rows_a.len() {
                    let (xa, ya) = &rows_a[j];
                    let (xb, yb) = &rows_b[j];
                    let Some(g) = mixup_gradient(&model, (xa, ya), (xb, yb), lambdas[j])
                        .map_err(|e| with_context(e, epoch, j))?
                    else {
                        continue;
                    };
                    total += g.loss;
                    count += 1;
                    opt.step(&mut model, &g).map_err(|e| with_context(e, epoch, j))?;
                }
                total / count.max(1) as f64
            }
        };
        session.record(epoch, Some(train_loss), &model)?;
        hook(epoch, &model)?;
    }
    Ok((model, opt.steps()))
}

fn shuffled(n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

fn baseline_loss(kind: LossKind, h: &DenseMatrix, y: &DenseMatrix) -> Result<LossOutput> {
    match kind {
        LossKind::CrossEntropy => loss::cross_entropy(h, y),
        _ => loss::mse(h, y),
    }
}

fn run_baseline(
    cfg: &TrainConfig,
    mut model: ModelParams,
    train: &Dataset,
    session: &mut Session,
    hook: &mut EpochHook<'_>,
) -> Result<(ModelParams, u64)> {
    let n = train.len();
    if n == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let mut shuffle_rng = rng::stream(cfg.seed, Purpose::Shuffle);
    let mut lambda_rng = rng::stream(cfg.seed, Purpose::Mixup);
    let dist = if cfg.loss == LossKind::MseMixup {
        Some(beta(cfg.mixup_psi)?)
    } else {
        None
    };
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    session.record(0, None, &model)?;
    for epoch in 1..=cfg.epochs {
        let order = shuffled(n, &mut shuffle_rng);
        let partner = dist.as_ref().map(|_| shuffled(n, &mut shuffle_rng));
        let (mut total, mut count) = (0.0, 0usize);
        for (j, chunk) in order.chunks(cfg.minibatch).enumerate() {
            let mut x = train.features.select_rows(chunk);
            let mut y = train.labels.select_rows(chunk);
            if let (Some(d), Some(p)) = (&dist, &partner) {
                let other = &p[j * cfg.minibatch..j * cfg.minibatch + chunk.len()];
                let lambda = d.sample(&mut lambda_rng);
                let (xm, ym) = loss::mixup_pairs(
                    &x,
                    &y,
                    &train.features.select_rows(other),
                    &train.labels.select_rows(other),
                    lambda,
                )?;
                x = xm;
                y = ym;
            }
            let cache = model::forward(&model, &x)?;
            let out = baseline_loss(cfg.loss, cache.output(), &y)?;
            let mut g = model::backward(&model, &cache, &out.dl_dh)?;
            g.loss = out.value;
            total += out.value;
            count += 1;
            opt.step(&mut model, &g).map_err(|e| with_context(e, epoch, j))?;
        }
        session.record(epoch, Some(total / count as f64), &model)?;
        hook(epoch, &model)?;
    }
    Ok((model, opt.steps()))
}
