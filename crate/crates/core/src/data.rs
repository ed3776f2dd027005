//! Datasets: synthetic generators, file loaders, splits and perturbations.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{self, Purpose};

pub const CALIFORNIA_FEATURES: [&str; 8] = [
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
];
pub const CALIFORNIA_LABEL: &str = "MedHouseVal";

pub const WINE_FEATURES: [&str; 11] = [
    "fixed acidity",
    "volatile acidity",
    "citric acid",
    "residual sugar",
    "chlorides",
    "free sulfur dioxide",
    "total sulfur dioxide",
    "density",
    "pH",
    "sulphates",
    "alcohol",
];
pub const WINE_LABEL: &str = "quality";

pub const LINEAR_COEFFICIENTS: [f64; 5] = [0.5, 1.5, 2.5, 3.5, 4.5];

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3072;

/// Columns with a standard deviation below this are centred but not scaled.
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub standardized: bool,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
}

impl DatasetMeta {
    pub fn new(source: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            source: source.into(),
            seed,
            standardized: false,
            feature_means: Vec::new(),
            feature_stds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: DenseMatrix,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: DenseMatrix, meta: DatasetMeta) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::shape(
                "Dataset::new",
                format!(
                    "{} feature rows vs {} label rows",
                    features.rows(),
                    labels.rows()
                ),
            ));
        }
        Ok(Self {
            features,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            meta: self.meta.clone(),
        }
    }

    /// Writes `x1..xd,y1..yc` (or `y` when c = 1) with a header line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut header: Vec<String> = (1..=self.feature_dim()).map(|j| format!("x{j}")).collect();
        if self.label_dim() == 1 {
            header.push("y".into());
        } else {
            header.extend((1..=self.label_dim()).map(|j| format!("y{j}")));
        }
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for i in 0..self.len() {
            let line: Vec<String> = self
                .features
                .row(i)
                .iter()
                .chain(self.labels.row(i))
                .map(|v| format!("{v:?}"))
                .collect();
            writeln!(w, "{}", line.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn linear_target(x: &[f64]) -> f64 {
    LINEAR_COEFFICIENTS.iter().zip(x).map(|(c, v)| c * v).sum()
}

pub fn nonlinear_target(x: &[f64]) -> f64 {
    x[0] + x[1].powi(2) + x[2].powi(3) + x[3].powi(4) + x[4].powi(5) + x[5].exp() + x[6].sin()
}

fn gen_uniform(n: usize, d: usize, seed: u64, source: &str, target: fn(&[f64]) -> f64) -> Dataset {
    let mut rng = rng::stream(seed, Purpose::Dataset);
    let mut features = DenseMatrix::zeros(n, d);
    let mut labels = DenseMatrix::zeros(n, 1);
    for i in 0..n {
        let row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.gen::<f64>();
        }
        let y = target(features.row(i));
        labels.set(i, 0, y);
    }
    Dataset {
        features,
        labels,
        meta: DatasetMeta::new(source, Some(seed)),
    }
}

/// Five U[0,1) features with `y = 0.5x₁ + 1.5x₂ + 2.5x₃ + 3.5x₄ + 4.5x₅`.
pub fn gen_linear(n: usize, seed: u64) -> Dataset {
    gen_uniform(n, 5, seed, "linear", linear_target)
}

/// Seven U[0,1) features with `y = x₁ + x₂² + x₃³ + x₄⁴ + x₅⁵ + e^{x₆} + sin x₇`.
pub fn gen_nonlinear(n: usize, seed: u64) -> Dataset {
    gen_uniform(n, 7, seed, "nonlinear", nonlinear_target)
}

/// Two interleaved half circles (the scikit-learn `make_moons` layout):
/// class 0 on the upper unit arc, class 1 on the lower arc centred at
/// (1, 0.5), each point jittered by N(0, noise²) per coordinate.
/// Labels are one-hot. Class 0 rows come first.
pub fn gen_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut rng = rng::stream(seed, Purpose::Dataset);
    let mut features = DenseMatrix::zeros(n, 2);
    let mut labels = DenseMatrix::zeros(n, 2);
    let spacing = |k: usize, count: usize| {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * k as f64 / (count - 1) as f64
        }
    };
    for i in 0..n {
        let (x, y, class) = if i < n_outer {
            let t = spacing(i, n_outer);
            (t.cos(), t.sin(), 0)
        } else {
            let t = spacing(i - n_outer, n_inner);
            (1.0 - t.cos(), 1.0 - t.sin() - 0.5, 1)
        };
        let (jx, jy) = if noise > 0.0 {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (noise * a, noise * b)
        } else {
            (0.0, 0.0)
        };
        features.set(i, 0, x + jx);
        features.set(i, 1, y + jy);
        labels.set(i, class, 1.0);
    }
    Dataset {
        features,
        labels,
        meta: DatasetMeta::new("moons", Some(seed)),
    }
}

/// Loads a header-led comma-separated table. Semicolon-separated files (the
/// original wine-quality distribution) are detected from the header.
pub fn load_table(path: &Path, feature_columns: &[&str], label_column: &str) -> Result<Dataset> {
    load_tables(&[path.to_path_buf()], feature_columns, label_column)
}

/// Loads and concatenates several tables with the same schema, in order.
pub fn load_tables(
    paths: &[PathBuf],
    feature_columns: &[&str],
    label_column: &str,
) -> Result<Dataset> {
    let d = feature_columns.len();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let text = read_text(path)?;
        let first_line = text.lines().next().unwrap_or("");
        let delimiter = if !first_line.contains(',') && first_line.contains(';') {
            b';'
        } else {
            b','
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema {
                    column: name.to_string(),
                    path: path.clone(),
                })
        };
        let feature_idx = feature_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>>>()?;
        let label_idx = find(label_column)?;
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                path: path.clone(),
                row,
                detail: e.to_string(),
            })?;
            let cell = |i: usize| -> Result<f64> {
                let raw = record.get(i).unwrap_or("");
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.clone(),
                        row,
                        detail: format!("column {:?}: {raw:?} is not a finite number", &headers[i]),
                    })
            };
            for &i in &feature_idx {
                feats.push(cell(i)?);
            }
            labels.push(cell(label_idx)?);
        }
    }
    let n = labels.len();
    let source = paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("+");
    Dataset::new(
        DenseMatrix::from_vec(n, d, feats)?,
        DenseMatrix::from_vec(n, 1, labels)?,
        DatasetMeta::new(source, None),
    )
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|e| Error::Format(format!("{}: not UTF-8 text ({e})", path.display())))
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Loads flattened images scaled to [0, 1] as a reconstruction dataset
/// (labels equal features).
///
/// `path` is either an IDX image file (optionally gzip-compressed), a single
/// CIFAR-10 binary batch (`*.bin`), or a directory whose `*.bin` files are
/// read in name order. At most `limit` images are kept.
pub fn load_images(path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let limit = limit.unwrap_or(usize::MAX);
    let (d, pixels) = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!(
                "{}: no CIFAR-10 *.bin batches found",
                path.display()
            )));
        }
        let mut all = Vec::new();
        for f in files {
            let remaining = limit.saturating_sub(all.len() / 3072);
            if remaining == 0 {
                break;
            }
            all.extend(read_cifar_batch(&f, remaining)?);
        }
        (3072, all)
    } else if path.extension().is_some_and(|x| x == "bin") {
        (3072, read_cifar_batch(path, limit)?)
    } else {
        read_idx_images(path, limit)?
    };
    let n = pixels.len() / d;
    let features = DenseMatrix::from_vec(
        n,
        d,
        pixels.into_iter().map(|p| f64::from(p) / 255.0).collect(),
    )?;
    let labels = features.clone();
    Dataset::new(
        features,
        labels,
        DatasetMeta::new(path.display().to_string(), None),
    )
}

fn read_idx_images(path: &Path, limit: usize) -> Result<(usize, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0).unwrap_or(0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let header = |i: usize| {
        be_u32(&bytes, 4 + 4 * i)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("{}: truncated IDX header", path.display())))
    };
    let (count, h, w) = (header(0)?, header(1)?, header(2)?);
    let d = h * w;
    let n = count.min(limit);
    let body = &bytes[16..];
    if body.len() < count * d {
        return Err(Error::Format(format!(
            "{}: {} pixel bytes for {count} images of {h}x{w}",
            path.display(),
            body.len()
        )));
    }
    Ok((d, body[..n * d].to_vec()))
}

fn read_cifar_batch(path: &Path, limit: usize) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte CIFAR records",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(CIFAR_RECORD)
        .take(limit)
        .flat_map(|r| r[1..].iter().copied())
        .collect())
}

/// Class labels from an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0).unwrap_or(0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = be_u32(&bytes, 4).unwrap_or(0) as usize;
    bytes
        .get(8..8 + count)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::Format(format!("{}: truncated IDX labels", path.display())))
}

/// Per-column mean and population standard deviation.
pub fn column_moments(m: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows().max(1) as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, v) in mean.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}

fn apply_standardization(ds: &Dataset, mean: &[f64], std: &[f64]) -> Dataset {
    let mut out = ds.clone();
    for r in 0..out.features.rows() {
        for ((v, mu), s) in out.features.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v -= mu;
            if *s >= MIN_SCALE {
                *v /= s;
            }
        }
    }
    out.meta.standardized = true;
    out.meta.feature_means = mean.to_vec();
    out.meta.feature_stds = std.to_vec();
    out
}

/// Standardizes features with moments fitted on `train`; `others` receive the
/// same transform. Labels are untouched.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    if train.is_empty() {
        return Err(Error::Data("cannot standardize on an empty training set".into()));
    }
    for o in others {
        if o.feature_dim() != train.feature_dim() {
            return Err(Error::shape(
                "standardize",
                format!("{} features vs {}", o.feature_dim(), train.feature_dim()),
            ));
        }
    }
    let (mean, std) = column_moments(&train.features);
    let fitted = apply_standardization(train, &mean, &std);
    let rest = others
        .iter()
        .map(|o| apply_standardization(o, &mean, &std))
        .collect();
    Ok((fitted, rest))
}

/// Inverts [`standardize`] using the stored moments.
pub fn unstandardize(ds: &Dataset) -> Dataset {
    if !ds.meta.standardized {
        return ds.clone();
    }
    let mut out = ds.clone();
    for r in 0..out.features.rows() {
        for ((v, mu), s) in out
            .features
            .row_mut(r)
            .iter_mut()
            .zip(&ds.meta.feature_means)
            .zip(&ds.meta.feature_stds)
        {
            if *s >= MIN_SCALE {
                *v *= s;
            }
            *v += mu;
        }
    }
    out.meta.standardized = false;
    out.meta.feature_means.clear();
    out.meta.feature_stds.clear();
    out
}

/// Train/test index partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn apply(&self, ds: &Dataset) -> (Dataset, Dataset) {
        (ds.subset(&self.train), ds.subset(&self.test))
    }
}

pub fn random_split_indices(n: usize, train_count: usize, seed: u64) -> Result<Split> {
    if train_count > n {
        return Err(Error::Data(format!(
            "train count {train_count} exceeds dataset size {n}"
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Split);
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates, written out so the draw sequence is fixed by this file.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let test = idx.split_off(train_count);
    Ok(Split { train: idx, test })
}

/// Random split with `round(fraction · N)` training examples.
pub fn split_random(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Data(format!("train fraction {fraction} outside [0, 1]")));
    }
    let count = (fraction * ds.len() as f64).round() as usize;
    split_count(ds, count, seed)
}

pub fn split_count(ds: &Dataset, train_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    Ok(random_split_indices(ds.len(), train_count, seed)?.apply(ds))
}

/// Membership mask of the region `|xⱼ − μⱼ| < 0.5σⱼ` for every coordinate,
/// with μ, σ the column moments of `features`.
pub fn roi_mask(features: &DenseMatrix) -> Vec<bool> {
    let (mean, std) = column_moments(features);
    (0..features.rows())
        .map(|r| {
            features
                .row(r)
                .iter()
                .zip(&mean)
                .zip(&std)
                .all(|((x, mu), s)| (x - mu).abs() < 0.5 * s)
        })
        .collect()
}

pub fn biased_split_indices(ds: &Dataset, gamma: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Data(format!("gamma {gamma} outside [0, 1]")));
    }
    let mask = roi_mask(&ds.features);
    let mut rng = rng::stream(seed, Purpose::Split);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (i, inside) in mask.into_iter().enumerate() {
        let p = if inside { gamma } else { 1.0 - gamma };
        if rng.gen::<f64>() < p {
            split.train.push(i);
        } else {
            split.test.push(i);
        }
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::DegenerateSplit {
            train: split.train.len(),
            test: split.test.len(),
        });
    }
    Ok(split)
}

/// Distribution-shifted split: in-region examples join train with
/// probability `gamma`, the rest with probability `1 − gamma`.
pub fn split_biased(ds: &Dataset, gamma: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    Ok(biased_split_indices(ds, gamma, seed)?.apply(ds))
}

/// `x' = x + β·ζ` with ζ standard normal per coordinate. Labels unchanged.
pub fn add_noise(train: &Dataset, beta: f64, seed: u64) -> Dataset {
    let mut out = train.clone();
    if beta == 0.0 {
        return out;
    }
    let mut rng = rng::stream(seed, Purpose::Noise);
    for v in out.features.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += beta * z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_formula_endpoints() {
        assert_eq!(linear_target(&[0.0; 5]), 0.0);
        assert_eq!(linear_target(&[1.0; 5]), 12.5);
    }

    #[test]
    fn nonlinear_formula_endpoints() {
        assert_eq!(nonlinear_target(&[0.0; 7]), 1.0);
        let expected = 5.0 + std::f64::consts::E + 1f64.sin();
        assert!((nonlinear_target(&[1.0; 7]) - expected).abs() < 1e-15);
        assert!((expected - 8.55975).abs() < 1e-5);
    }

    #[test]
    fn generators_are_pure_functions_of_n_and_seed() {
        assert_eq!(gen_linear(50, 3), gen_linear(50, 3));
        assert_ne!(gen_linear(50, 3).features, gen_linear(50, 4).features);
        assert_eq!(gen_nonlinear(20, 1), gen_nonlinear(20, 1));
        assert_eq!(gen_moons(30, 0.1, 9), gen_moons(30, 0.1, 9));
        let ds = gen_linear(100, 0);
        for i in 0..ds.len() {
            assert!(ds.features.row(i).iter().all(|v| (0.0..1.0).contains(v)));
            assert_eq!(ds.labels.get(i, 0), linear_target(ds.features.row(i)));
        }
    }

    #[test]
    fn noiseless_moons_geometry() {
        let ds = gen_moons(100, 0.0, 0);
        let mut counts = [0, 0];
        for i in 0..ds.len() {
            let class = if ds.labels.get(i, 0) == 1.0 { 0 } else { 1 };
            counts[class] += 1;
            let (x, y) = (ds.features.get(i, 0), ds.features.get(i, 1));
            if class == 0 {
                assert!((x * x + y * y - 1.0).abs() < 1e-12);
                assert!(y >= -1e-15);
            } else {
                let (cx, cy) = (x - 1.0, y - 0.5);
                assert!((cx * cx + cy * cy - 1.0).abs() < 1e-12);
                assert!(y <= 0.5 + 1e-15);
            }
        }
        assert_eq!(counts, [50, 50]);
    }

    #[test]
    fn split_fraction_sizes() {
        let ds = gen_linear(20640, 0);
        let (tr, te) = split_random(&ds, 0.5, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (10320, 10320));
        let (tr, te) = split_random(&gen_linear(10, 0), 1.0, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (10, 0));
    }

    #[test]
    fn random_split_is_a_reproducible_partition() {
        let a = random_split_indices(100, 37, 5).unwrap();
        assert_eq!(a, random_split_indices(100, 37, 5).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(random_split_indices(5, 6, 0).is_err());
    }

    #[test]
    fn biased_split_with_gamma_one_is_the_roi() {
        let ds = gen_nonlinear(2000, 3);
        let mask = roi_mask(&ds.features);
        // In seven dimensions the ROI is tiny; use a 1-d projection too.
        let one_d = ds.subset(&(0..ds.len()).collect::<Vec<_>>());
        let one_d = Dataset::new(
            DenseMatrix::column_vector(&one_d.features.column(0)),
            one_d.labels,
            one_d.meta,
        )
        .unwrap();
        for data in [&ds, &one_d] {
            let mask = roi_mask(&data.features);
            if mask.iter().all(|m| !m) {
                continue;
            }
            let split = biased_split_indices(data, 1.0, 11).unwrap();
            let roi: Vec<usize> = (0..data.len()).filter(|&i| mask[i]).collect();
            assert_eq!(split.train, roi);
        }
        assert_eq!(mask.len(), 2000);
    }

    #[test]
    fn roi_mask_matches_hand_computed() {
        // Values 0..10: mean 4.5, population std √8.25 ≈ 2.872, band ±1.436.
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let mask = roi_mask(&DenseMatrix::column_vector(&x));
        let expected = [false, false, false, false, true, true, false, false, false, false];
        assert_eq!(mask, expected);
    }

    #[test]
    fn biased_split_coin_fraction() {
        let ds = gen_linear(10_000, 4);
        let split = biased_split_indices(&ds, 0.5, 2).unwrap();
        let frac = split.train.len() as f64 / 10_000.0;
        // Binomial(10⁴, 0.5): sd 0.005, so ±0.02 is four sigma.
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn degenerate_biased_split_is_reported() {
        // A single example: one side is always empty.
        let ds = gen_linear(1, 0);
        assert!(matches!(
            split_biased(&ds, 0.5, 0),
            Err(Error::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn noise_contract() {
        let ds = gen_linear(100, 0);
        assert_eq!(add_noise(&ds, 0.0, 1), ds);
        let noisy = add_noise(&ds, 0.7, 1);
        assert_eq!(noisy.labels, ds.labels);
        assert_ne!(noisy.features, ds.features);
    }

    #[test]
    fn unit_noise_variance() {
        let n = 100_000;
        let ds = Dataset::new(
            DenseMatrix::zeros(n, 1),
            DenseMatrix::zeros(n, 1),
            DatasetMeta::new("zeros", None),
        )
        .unwrap();
        let noisy = add_noise(&ds, 1.0, 8);
        let (_, std) = column_moments(&noisy.features);
        assert!((std[0] * std[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn standardize_roundtrip_and_moments() {
        let ds = gen_nonlinear(500, 2);
        let (train, test) = split_random(&ds, 0.6, 1).unwrap();
        let (fitted, others) = standardize(&train, &[&test]).unwrap();
        let (mean, std) = column_moments(&fitted.features);
        assert!(mean.iter().all(|m| m.abs() < 1e-8));
        assert!(std.iter().all(|s| (s - 1.0).abs() < 1e-6));
        assert_eq!(others[0].meta.feature_means, fitted.meta.feature_means);
        let back = unstandardize(&fitted);
        let err = back.features.sub(&train.features).unwrap().max_abs();
        assert!(err < 1e-10 * train.features.max_abs());
    }

    #[test]
    fn constant_column_is_centred_only() {
        let mut ds = gen_linear(10, 0);
        for r in 0..10 {
            ds.features.set(r, 2, 3.0);
        }
        let (fitted, _) = standardize(&ds, &[]).unwrap();
        assert!(fitted.features.column(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn table_loading_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b,target\n1,2,3\n4,5,6\n").unwrap();
        let ds = load_table(&path, &["b", "a"], "target").unwrap();
        assert_eq!(ds.features.data(), &[2.0, 1.0, 5.0, 4.0]);
        assert_eq!(ds.labels.data(), &[3.0, 6.0]);

        assert!(matches!(
            load_table(&path, &["a", "zzz"], "target"),
            Err(Error::Schema { .. })
        ));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,target\n1,2\nx,3\n").unwrap();
        match load_table(&bad, &["a"], "target") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }

        let semi = dir.path().join("semi.csv");
        std::fs::write(&semi, "\"a\";\"target\"\n1;2\n").unwrap();
        let merged = load_tables(&[path.clone(), semi], &["a"], "target").unwrap();
        assert_eq!(merged.features.data(), &[1.0, 4.0, 1.0]);
    }

    fn write_idx(path: &Path, images: &[[u8; 4]]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for im in images {
            f.write_all(im).unwrap();
        }
    }

    #[test]
    fn idx_images_scale_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images-idx3-ubyte");
        write_idx(&path, &[[0, 0, 0, 0], [255, 255, 255, 255], [0, 51, 102, 255]]);
        let ds = load_images(&path, None).unwrap();
        assert_eq!(ds.features.shape(), (3, 4));
        assert_eq!(ds.features.row(0), &[0.0; 4]);
        assert_eq!(ds.features.row(1), &[1.0; 4]);
        assert_eq!(ds.features.row(2), &[0.0, 0.2, 0.4, 1.0]);
        assert_eq!(ds.labels, ds.features);
        assert_eq!(load_images(&path, Some(1)).unwrap().len(), 1);

        let wrong = dir.path().join("labels-idx1-ubyte");
        std::fs::write(&wrong, [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        assert!(matches!(load_images(&wrong, None), Err(Error::Format(_))));
        assert_eq!(load_idx_labels(&wrong).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn cifar_batches() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat(255u8).take(3072));
        let mut two = rec.clone();
        two.extend(&rec);
        std::fs::write(dir.path().join("data_batch_1.bin"), &two).unwrap();
        std::fs::write(dir.path().join("data_batch_2.bin"), &rec).unwrap();
        let ds = load_images(dir.path(), None).unwrap();
        assert_eq!(ds.features.shape(), (3, 3072));
        assert!(ds.features.data().iter().all(|&v| v == 1.0));
        assert_eq!(load_images(dir.path(), Some(2)).unwrap().len(), 2);
        std::fs::write(dir.path().join("broken.bin"), [1u8, 2, 3]).unwrap();
        assert!(load_images(&dir.path().join("broken.bin"), None).is_err());
    }
}
