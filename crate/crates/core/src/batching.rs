//! Balanced generation of unique index batches.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamRng};

/// Consecutive duplicate slices tolerated before giving up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSet {
    pub batches: Vec<Vec<usize>>,
    pub n: usize,
    pub seed: u64,
}

impl BatchSet {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batches.first().map_or(0, Vec::len)
    }

    /// One line per batch, indices separated by spaces, preceded by a
    /// `# n=<n> seed=<seed>` header.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "# n={} seed={}", self.n, self.seed).map_err(io)?;
        for b in &self.batches {
            let line: Vec<String> = b.iter().map(usize::to_string).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .unwrap_or_default();
        let field = |key: &str| -> Result<u64> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad batch header", path.display())))
        };
        let n = field("n=")? as usize;
        let seed = field("seed=")?;
        let mut batches = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let batch = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().ok().filter(|&i| i < n))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    detail: "expected indices below n".into(),
                })?;
            batches.push(batch);
        }
        Ok(Self { batches, n, seed })
    }
}

/// Draws `k` distinct size-`m` index sets from `[0, n)`.
///
/// The full index sequence is shuffled and cut into consecutive slices of
/// length `m`; each slice is kept unless an equal set was already kept. This
/// repeats until `k` batches exist. When `m` does not divide `n`, the short
/// tail slice is topped up from the front of the same permutation, so one
/// pass yields `⌈n/m⌉` distinct batches covering every index.
pub fn balanced_batches(n: usize, m: usize, k: usize, seed: u64) -> Result<BatchSet> {
    let mut rng = rng::stream(seed, Purpose::Batching);
    balanced_batches_with(n, m, k, seed, &mut rng)
}

/// As [`balanced_batches`] with a caller-supplied generator.
pub fn balanced_batches_with(
    n: usize,
    m: usize,
    k: usize,
    seed: u64,
    rng: &mut StreamRng,
) -> Result<BatchSet> {
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "batch size {m} must be in [1, {n}]"
        )));
    }
    if k == 0 {
        return Err(Error::Config("batch count must be at least 1".into()));
    }
    let exhausted = |found, rejections| Error::Exhausted {
        n,
        batch_size: m,
        requested: k,
        found,
        rejections,
    };
    if let Some(total) = binomial(n, m) {
        if (k as u128) > total {
            return Err(exhausted(0, 0));
        }
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(k);
    let mut batches = Vec::with_capacity(k);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rejections = 0;
    while batches.len() < k {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let tail = n % m;
        let wrapped: Option<Vec<usize>> = (tail > 0).then(|| {
            order[n - tail..]
                .iter()
                .chain(&order[..m - tail])
                .copied()
                .collect()
        });
        for slice in order.chunks_exact(m).chain(wrapped.as_deref()) {
            let mut key = slice.to_vec();
            key.sort_unstable();
            if seen.insert(key) {
                batches.push(slice.to_vec());
                rejections = 0;
                if batches.len() == k {
                    break;
                }
            } else {
                rejections += 1;
                if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                    return Err(exhausted(batches.len(), rejections));
                }
            }
        }
    }
    Ok(BatchSet { batches, n, seed })
}

/// C(n, m), or `None` when it overflows 128 bits.
pub fn binomial(n: usize, m: usize) -> Option<u128> {
    let m = m.min(n - m);
    let mut acc: u128 = 1;
    for i in 0..m {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}
