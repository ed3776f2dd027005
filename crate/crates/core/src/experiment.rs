//! Experiment descriptions: which data, which network, which training
//! settings. Keys left out of a config file take the per-dataset defaults
//! below, and the resolved form is what gets hashed and echoed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::optim::{OptimizerSpec, Rule};
use crate::trainer::{hash_text, LossKind, ProbeMode, TrainConfig, UpdateMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DatasetName {
    Linear,
    Nonlinear,
    CaliforniaHousing,
    WineQuality,
    Mnist,
    Cifar10,
    Moons,
}

impl DatasetName {
    pub fn is_image(self) -> bool {
        matches!(self, DatasetName::Mnist | DatasetName::Cifar10)
    }

    pub fn is_synthetic(self) -> bool {
        matches!(self, DatasetName::Linear | DatasetName::Nonlinear | DatasetName::Moons)
    }

    /// Columns of the feature matrix.
    pub fn feature_dim(self) -> usize {
        match self {
            DatasetName::Linear => 5,
            DatasetName::Nonlinear => 7,
            DatasetName::CaliforniaHousing => 8,
            DatasetName::WineQuality => 11,
            DatasetName::Mnist => 784,
            DatasetName::Cifar10 => 3072,
            DatasetName::Moons => 2,
        }
    }

    fn default_size(self) -> usize {
        match self {
            DatasetName::Moons => 1000,
            _ => 6000,
        }
    }

    fn default_paths(self) -> Vec<PathBuf> {
        let p = |s: &str| PathBuf::from(s);
        match self {
            DatasetName::CaliforniaHousing => vec![p("data/california_housing.csv")],
            DatasetName::WineQuality => vec![p("data/winequality-red.csv")],
            DatasetName::Mnist => vec![p("data/mnist5k-images-idx3-ubyte.gz")],
            _ => Vec::new(),
        }
    }
}

/// Ablation setting, inferred from the dataset section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    Limited,
    Shift,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    /// Rows to generate for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Exact training-set size; takes precedence over `train_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    /// Biased split strength; switches the split to the ROI-biased mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Scale of additive standard normal noise on training features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathBuf>,
    /// Images to read from the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    /// Keep only the first rows of the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[serde(default = "default_moons_noise")]
    pub moons_noise: f64,
}

fn default_fraction() -> f64 {
    0.5
}

fn default_moons_noise() -> f64 {
    0.1
}

impl DatasetSpec {
    pub fn new(name: DatasetName) -> Self {
        Self {
            name,
            size: None,
            train_count: None,
            train_fraction: default_fraction(),
            gamma: None,
            beta: None,
            standardize: None,
            paths: Vec::new(),
            limit: None,
            test_limit: None,
            moons_noise: default_moons_noise(),
        }
    }

    pub fn regime(&self) -> Regime {
        if self.gamma.is_some() {
            Regime::Shift
        } else if self.beta.is_some() {
            Regime::Noise
        } else if self.train_count.is_some_and(|n| n <= 100) {
            Regime::Limited
        } else {
            Regime::Full
        }
    }

    fn resolve(mut self) -> Self {
        if self.name.is_synthetic() && self.size.is_none() {
            self.size = Some(self.name.default_size());
        }
        if self.standardize.is_none() {
            self.standardize = Some(matches!(
                self.name,
                DatasetName::CaliforniaHousing | DatasetName::WineQuality
            ));
        }
        if self.paths.is_empty() {
            self.paths = self.name.default_paths();
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!("train_fraction {} outside [0, 1]", self.train_fraction)));
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("gamma {g} outside [0, 1]")));
            }
        }
        if let Some(b) = self.beta {
            if b.is_nan() || b < 0.0 {
                return Err(Error::Config(format!("beta must be non-negative, got {b}")));
            }
        }
        if !self.name.is_synthetic() && self.paths.is_empty() {
            return Err(Error::Config(format!("dataset {:?} needs at least one path", self.name)));
        }
        Ok(())
    }

    /// Loads or generates the data, splits it, then standardizes and adds
    /// noise to the training part as configured. Relative paths are looked
    /// up under `base` first, then the working directory.
    pub fn build(&self, seed: u64, base: &Path) -> Result<(Dataset, Dataset)> {
        let paths: Vec<PathBuf> = self
            .paths
            .iter()
            .map(|p| {
                let joined = base.join(p);
                if joined.exists() {
                    joined
                } else {
                    p.clone()
                }
            })
            .collect();
        let full = match self.name {
            DatasetName::Linear => data::gen_linear(self.size.unwrap_or(6000), seed),
            DatasetName::Nonlinear => data::gen_nonlinear(self.size.unwrap_or(6000), seed),
            DatasetName::Moons => data::gen_moons(self.size.unwrap_or(1000), self.moons_noise, seed),
            DatasetName::CaliforniaHousing => {
                data::load_tables(&paths, &data::CALIFORNIA_FEATURES, data::CALIFORNIA_LABEL)?
            }
            DatasetName::WineQuality => {
                data::load_tables(&paths, &data::WINE_FEATURES, data::WINE_LABEL)?
            }
            DatasetName::Mnist | DatasetName::Cifar10 => data::load_images(&paths[0], self.limit)?,
        };
        let (train, test) = if let Some(g) = self.gamma {
            data::split_biased(&full, g, seed)?
        } else if let Some(n) = self.train_count {
            data::split_count(&full, n, seed)?
        } else {
            data::split_random(&full, self.train_fraction, seed)?
        };
        let test = match self.test_limit {
            Some(l) if l < test.len() => test.subset(&(0..l).collect::<Vec<_>>()),
            _ => test,
        };
        let (train, test) = if self.standardize.unwrap_or(false) {
            let (train, mut others) = data::standardize(&train, &[&test])?;
            (train, others.remove(0))
        } else {
            (train, test)
        };
        let train = match self.beta {
            Some(b) => data::add_noise(&train, b, seed),
            None => train,
        };
        Ok((train, test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureName {
    Regression,
    Autoencoder,
    MoonsClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: ArchitectureName,
    /// Hidden width of the regression net, latent width of the autoencoder.
    pub width: usize,
    /// Sigmoid after the last layer of the classifier.
    pub sigmoid_head: bool,
}

impl ModelSpec {
    pub fn architecture(&self) -> Architecture {
        match self.architecture {
            ArchitectureName::Regression => Architecture::Regression { hidden: self.width },
            ArchitectureName::Autoencoder => Architecture::Autoencoder { latent: self.width },
            ArchitectureName::MoonsClassifier => Architecture::MoonsClassifier {
                sigmoid_head: self.sigmoid_head,
            },
        }
    }

    pub fn build(&self, input_dim: usize, seed: u64) -> ModelParams {
        self.architecture().build(input_dim, seed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub architecture: Option<ArchitectureName>,
    pub width: Option<usize>,
    pub sigmoid_head: Option<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerOverrides {
    pub rule: Option<Rule>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub loss: Option<LossKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub batch_count: Option<usize>,
    pub minibatch: Option<usize>,
    pub mixup_psi: Option<f64>,
    pub update_mode: Option<UpdateMode>,
    pub probe_mode: Option<ProbeMode>,
    pub eval_every: Option<usize>,
    pub metric_batch_size: Option<usize>,
    pub metric_batch_count: Option<usize>,
    pub optimizer: Option<OptimizerOverrides>,
}

/// An experiment file as written by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub seed: u64,
    /// Epochs at which to save a checkpoint besides the final one.
    #[serde(default)]
    pub checkpoint_epochs: Vec<usize>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
}

/// Every setting filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub seed: u64,
    pub regime: Regime,
    pub checkpoint_epochs: Vec<usize>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every unset key from the defaults for the dataset, ablation
    /// setting and loss.
    pub fn resolve(&self) -> Result<Experiment> {
        let dataset = self.dataset.clone().resolve();
        dataset.validate()?;
        let regime = dataset.regime();
        let name = dataset.name;
        let t = &self.train;
        let loss = t.loss.unwrap_or(if name == DatasetName::Moons {
            LossKind::CrossEntropy
        } else {
            LossKind::Rlp
        });

        let mut optimizer = default_optimizer(name, regime, loss);
        if let Some(o) = t.optimizer {
            if let Some(rule) = o.rule {
                optimizer.rule = rule;
            }
            let set = |slot: &mut f64, v: Option<f64>| {
                if let Some(v) = v {
                    *slot = v;
                }
            };
            set(&mut optimizer.learning_rate, o.learning_rate);
            set(&mut optimizer.momentum, o.momentum);
            set(&mut optimizer.beta1, o.beta1);
            set(&mut optimizer.beta2, o.beta2);
            set(&mut optimizer.eps, o.eps);
            set(&mut optimizer.weight_decay, o.weight_decay);
        }

        let train_rows = dataset.train_count;
        let batch_size = t.batch_size.unwrap_or_else(|| default_batch_size(name, name.feature_dim(), train_rows));
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            loss,
            optimizer,
            epochs: t.epochs.unwrap_or(default_epochs(name)),
            batch_size,
            batch_count: t.batch_count.unwrap_or(if regime == Regime::Limited { 100 } else { 1000 }),
            minibatch: t.minibatch.unwrap_or(defaults.minibatch),
            mixup_psi: t.mixup_psi.unwrap_or(if name == DatasetName::Moons { 0.15 } else { 0.25 }),
            update_mode: t.update_mode.unwrap_or(defaults.update_mode),
            probe_mode: t.probe_mode.unwrap_or(defaults.probe_mode),
            seed: self.seed,
            eval_every: t.eval_every.unwrap_or(1),
            metric_batch_size: t.metric_batch_size.unwrap_or(batch_size),
            metric_batch_count: t.metric_batch_count.unwrap_or(1000),
            classification: name == DatasetName::Moons,
        };
        train.validate()?;

        let m = self.model;
        let architecture = m.architecture.unwrap_or(match name {
            DatasetName::Mnist | DatasetName::Cifar10 => ArchitectureName::Autoencoder,
            DatasetName::Moons => ArchitectureName::MoonsClassifier,
            _ => ArchitectureName::Regression,
        });
        let model = ModelSpec {
            architecture,
            width: m.width.unwrap_or(32),
            sigmoid_head: m
                .sigmoid_head
                .unwrap_or(loss.is_rlp() && architecture == ArchitectureName::MoonsClassifier),
        };
        Ok(Experiment {
            seed: self.seed,
            regime,
            checkpoint_epochs: self.checkpoint_epochs.clone(),
            dataset,
            model,
            train,
        })
    }
}

impl Experiment {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment serializes")
    }

    /// SHA-256 of the resolved settings; stamped on every metrics row.
    pub fn hash(&self) -> String {
        hash_text(&self.to_toml())
    }
}

pub fn default_epochs(name: DatasetName) -> usize {
    match name {
        DatasetName::CaliforniaHousing => 500,
        DatasetName::Mnist => 100,
        DatasetName::Cifar10 => 50,
        DatasetName::Moons => 100,
        DatasetName::WineQuality | DatasetName::Linear | DatasetName::Nonlinear => 200,
    }
}

/// `d + 2` rows for tabular data; half the training rows (at least 2) for
/// images, where the fit is rank deficient anyway.
pub fn default_batch_size(name: DatasetName, input_dim: usize, train_rows: Option<usize>) -> usize {
    if name.is_image() {
        let rows = train_rows.unwrap_or(input_dim * 2);
        (rows / 2).max(2)
    } else {
        input_dim + 2
    }
}

/// Optimizer, step size and weight decay per dataset and setting.
pub fn default_optimizer(name: DatasetName, regime: Regime, loss: LossKind) -> OptimizerSpec {
    let limited = regime == Regime::Limited;
    let (rule, lr) = match name {
        DatasetName::Mnist | DatasetName::Cifar10 => (Rule::SgdNesterov, 0.01),
        DatasetName::Moons => (Rule::Adam, 1e-3),
        DatasetName::WineQuality if limited => (Rule::Adamw, 5e-3),
        _ if limited => (Rule::Adamw, 5e-4),
        _ => (Rule::Adam, 1e-4),
    };
    let l2 = if limited && !name.is_image() { 1e-2 } else { 1e-4 };
    let weight_decay = match (loss, rule) {
        (LossKind::MseL2, _) => l2,
        (_, Rule::Adamw) => 1e-4,
        _ => 0.0,
    };
    OptimizerSpec::new(rule, lr, weight_decay)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> ExperimentFile {
        ExperimentFile::parse(text).unwrap()
    }

    #[test]
    fn minimal_file_gets_table_defaults() {
        let e = file("[dataset]\nname = \"california_housing\"\n").resolve().unwrap();
        assert_eq!(e.regime, Regime::Full);
        assert_eq!(e.train.epochs, 500);
        assert_eq!(e.train.optimizer.rule, Rule::Adam);
        assert_eq!(e.train.optimizer.learning_rate, 1e-4);
        assert_eq!((e.train.batch_size, e.train.batch_count), (10, 1000));
        assert_eq!(e.dataset.standardize, Some(true));
        assert_eq!(e.model.architecture, ArchitectureName::Regression);
        assert_eq!(e.model.width, 32);
    }

    #[test]
    fn limited_regime_switches_optimizer() {
        let e = file("[dataset]\nname = \"wine_quality\"\ntrain_count = 50\n")
            .resolve()
            .unwrap();
        assert_eq!(e.regime, Regime::Limited);
        assert_eq!(e.train.optimizer.rule, Rule::Adamw);
        assert_eq!(e.train.optimizer.learning_rate, 5e-3);
        assert_eq!(e.train.optimizer.weight_decay, 1e-4);
        assert_eq!(e.train.batch_count, 100);

        let e = file("[dataset]\nname = \"linear\"\ntrain_count = 50\n[train]\nloss = \"mse_l2\"\n")
            .resolve()
            .unwrap();
        assert_eq!(e.train.optimizer.weight_decay, 1e-2);
    }

    #[test]
    fn image_defaults() {
        let e = file("[dataset]\nname = \"mnist\"\ntrain_count = 50\n").resolve().unwrap();
        assert_eq!(e.train.batch_size, 25);
        assert_eq!(e.train.optimizer.rule, Rule::SgdNesterov);
        assert_eq!(e.model.architecture, ArchitectureName::Autoencoder);
        assert_eq!(e.dataset.standardize, Some(false));
    }

    #[test]
    fn moons_defaults_to_classification() {
        let e = file("[dataset]\nname = \"moons\"\n").resolve().unwrap();
        assert!(e.train.classification);
        assert_eq!(e.train.loss, LossKind::CrossEntropy);
        assert!(!e.model.sigmoid_head);
        let e = file("[dataset]\nname = \"moons\"\n[train]\nloss = \"rlp\"\n").resolve().unwrap();
        assert!(e.model.sigmoid_head);
        assert_eq!(e.train.mixup_psi, 0.15);
    }

    #[test]
    fn overrides_win() {
        let e = file(
            "seed = 9\n[dataset]\nname = \"linear\"\n[train]\nepochs = 3\nupdate_mode = \"per_batch\"\n[train.optimizer]\nlearning_rate = 0.5\n",
        )
        .resolve()
        .unwrap();
        assert_eq!((e.seed, e.train.seed, e.train.epochs), (9, 9, 3));
        assert_eq!(e.train.update_mode, UpdateMode::PerBatch);
        assert_eq!(e.train.optimizer.learning_rate, 0.5);
        assert_eq!(e.train.optimizer.rule, Rule::Adam);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(
            ExperimentFile::parse("[dataset]\nname = \"linear\"\nbogus = 1\n"),
            Err(Error::Config(_))
        ));
        let err = file("[dataset]\nname = \"linear\"\ngamma = 1.5\n").resolve().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = file("[dataset]\nname = \"cifar10\"\n").resolve().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn resolved_form_roundtrips_and_hash_is_stable() {
        let e = file("[dataset]\nname = \"nonlinear\"\nbeta = 0.5\n").resolve().unwrap();
        assert_eq!(e.regime, Regime::Noise);
        let back: Experiment = toml::from_str(&e.to_toml()).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.hash(), e.hash());
        let other = file("[dataset]\nname = \"nonlinear\"\nbeta = 0.1\n").resolve().unwrap();
        assert_ne!(other.hash(), e.hash());
    }

    #[test]
    fn build_applies_split_noise_and_limits() {
        let mut spec = DatasetSpec::new(DatasetName::Nonlinear).resolve();
        spec.size = Some(200);
        spec.train_count = Some(50);
        spec.test_limit = Some(30);
        let (train, test) = spec.build(4, Path::new(".")).unwrap();
        assert_eq!((train.len(), test.len()), (50, 30));
        spec.beta = Some(0.0);
        let (noisy, _) = spec.build(4, Path::new(".")).unwrap();
        assert_eq!(noisy.features, train.features);
        spec.beta = Some(1.0);
        let (noisy, _) = spec.build(4, Path::new(".")).unwrap();
        assert_ne!(noisy.features, train.features);
        assert_eq!(noisy.labels, train.labels);
    }

    #[test]
    fn build_standardizes_on_train_statistics() {
        let mut spec = DatasetSpec::new(DatasetName::Linear).resolve();
        spec.size = Some(400);
        spec.standardize = Some(true);
        let (train, _) = spec.build(1, Path::new(".")).unwrap();
        let (means, stds) = data::column_moments(&train.features);
        assert!(means.iter().all(|m| m.abs() < 1e-8));
        assert!(stds.iter().all(|s| (s - 1.0).abs() < 1e-6));
        assert!(train.meta.standardized);
    }
}
