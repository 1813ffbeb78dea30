//! Datasets: MNIST IDX loading, synthetic generators, splits and CSV export.

use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{Matrix, Vector};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
/// Standard deviation of the Gaussian jitter in [`gen_clusters2d`].
pub const CLUSTER_NOISE: f64 = 0.05;
/// Absorbs representation error in `f * N` before flooring.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Mnist,
    Clusters2d,
    SynthActs,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Mnist => "mnist",
            Provenance::Clusters2d => "clusters2d",
            Provenance::SynthActs => "synth_acts",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Provenance::Mnist),
            "clusters2d" => Ok(Provenance::Clusters2d),
            "synth_acts" => Ok(Provenance::SynthActs),
            other => Err(Error::contract(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Samples stored as the columns of an `n x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Option<Vec<usize>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Option<Vec<usize>>, provenance: Provenance) -> Result<Self> {
        ensure!(samples.iter().all(|v| v.is_finite()), "dataset contains non-finite values");
        if let Some(l) = &labels {
            ensure!(
                l.len() == samples.ncols(),
                "{} labels for {} samples",
                l.len(),
                samples.ncols()
            );
        }
        Ok(Self {
            samples,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn sample(&self, i: usize) -> Vector {
        self.samples.column(i).into_owned()
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            samples: self.samples.select_columns(indices.iter()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance,
        }
    }

    /// Mean squared distance of a sample to the dataset mean.
    pub fn variance(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mean = self.samples.column_mean();
        self.samples
            .column_iter()
            .map(|c| (c - &mean).norm_squared())
            .sum::<f64>()
            / self.len() as f64
    }

    /// One sample per row with a header, labels last when present.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        let mut out = header.join(",");
        out.push('\n');
        for (j, col) in self.samples.column_iter().enumerate() {
            let mut row: Vec<String> = col.iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                row.push(l[j].to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format {
                offset: self.bytes.len(),
                message: format!("truncated while reading {what}: needed {len} bytes at offset {}", self.pos),
            }),
        }
    }
}

fn check_magic(r: &mut Reader<'_>, expected: u32) -> Result<()> {
    let magic = r.u32("magic number")?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

/// Parses an IDX image file into a `784 x count` matrix (for 28x28 images)
/// with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader { bytes, pos: 0 };
    check_magic(&mut r, IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let dim = rows * cols;
    let pixels = r.take(count * dim, "pixel data")?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes after pixel data", bytes.len() - r.pos),
        });
    }
    Ok(Matrix::from_iterator(dim, count, pixels.iter().map(|&p| p as f64 / 255.0)))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0 };
    check_magic(&mut r, LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let labels = r.take(count, "label data")?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes after label data", bytes.len() - r.pos),
        });
    }
    Ok(labels.iter().map(|&l| l as usize).collect())
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img_bytes = std::fs::read(&images).map_err(|e| Error::io(&images, e))?;
    let lbl_bytes = std::fs::read(&labels).map_err(|e| Error::io(&labels, e))?;
    let samples = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    ensure!(
        labels.len() == samples.ncols(),
        "{} labels for {} images",
        labels.len(),
        samples.ncols()
    );
    Dataset::new(samples, Some(labels), Provenance::Mnist)
}

/// Three clusters in the plane: 40% along a noisy horizontal segment, 30%
/// filling a square, 30% along a noisy diagonal. Labels are cluster ids.
pub fn gen_clusters2d(n: usize, seed: u64) -> Result<Dataset> {
    ensure!(n >= 10, "need at least 10 points, got {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, CLUSTER_NOISE).expect("valid noise scale");
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let line = n * 2 / 5;
    let square = n * 3 / 10;
    let diagonal = n - line - square;
    let mut samples = Matrix::zeros(2, n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let (x, y, c) = if j < line {
            (-1.5 + 1.5 * unit.sample(&mut rng), -0.8 + noise.sample(&mut rng), 0)
        } else if j < line + square {
            (-0.4 + 0.8 * unit.sample(&mut rng), 0.4 + 0.8 * unit.sample(&mut rng), 1)
        } else {
            let t = unit.sample(&mut rng);
            (0.8 + t + noise.sample(&mut rng), t - 0.5 + noise.sample(&mut rng), 2)
        };
        samples[(0, j)] = x;
        samples[(1, j)] = y;
        labels.push(c);
    }
    debug_assert_eq!(labels.iter().filter(|&&c| c == 2).count(), diagonal);
    Dataset::new(samples, Some(labels), Provenance::Clusters2d)
}

/// The unit-norm dictionary `gen_synth_activations` uses for this seed.
pub fn synth_dictionary(dim: usize, dict_size: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_dictionary(dim, dict_size, &mut rng)
}

fn draw_dictionary(dim: usize, dict_size: usize, rng: &mut impl Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let mut d = Matrix::from_fn(dim, dict_size, |_, _| normal.sample(rng));
        if d.column_iter().all(|c| c.norm() > 1e-12) {
            for mut c in d.column_iter_mut() {
                let norm = c.norm();
                c /= norm;
            }
            return d;
        }
    }
}

/// `x = D a + eps` with a random unit-norm dictionary `D`, codes `a` that are
/// positive on `true_sparsity` random atoms, and Gaussian noise of scale
/// `noise`.
pub fn gen_synth_activations(
    count: usize,
    dim: usize,
    dict_size: usize,
    true_sparsity: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    ensure!(dim >= 1 && dict_size >= 1, "dimensions must be positive");
    ensure!(
        true_sparsity <= dict_size,
        "sparsity {true_sparsity} exceeds dictionary size {dict_size}"
    );
    ensure!(noise >= 0.0 && noise.is_finite(), "noise must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = draw_dictionary(dim, dict_size, &mut rng);
    let magnitude = Uniform::new(0.5, 1.5).expect("valid range");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples = Matrix::zeros(dim, count);
    for j in 0..count {
        let mut col = samples.column_mut(j);
        for atom in sample(&mut rng, dict_size, true_sparsity) {
            col.axpy(magnitude.sample(&mut rng), &dict.column(atom), 1.0);
        }
        if noise > 0.0 {
            for v in col.iter_mut() {
                *v += noise * normal.sample(&mut rng);
            }
        }
    }
    Dataset::new(samples, None, Provenance::SynthActs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train fraction", self.train_fraction),
            ("subsample fraction", self.subsample_fraction),
        ] {
            ensure!(f > 0.0 && f <= 1.0, "{name} must lie in (0, 1], got {f}");
        }
        Ok(())
    }
}

/// `floor(f * count)`.
pub fn fraction_count(f: f64, count: usize) -> usize {
    ((f * count as f64) + FLOOR_SLACK).floor() as usize
}

/// Seeded shuffle, then the test split is fixed before the training part is
/// subsampled. Smaller subsample fractions yield prefixes of larger ones.
pub fn split_and_subsample(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = fraction_count(spec.train_fraction, ds.len());
    let (train_idx, test_idx) = order.split_at(n_train);
    let train = subsample_indices(train_idx, spec.subsample_fraction)?;
    Ok((ds.select(train), ds.select(test_idx)))
}

/// Keeps the first `floor(f * N)` samples of an already shuffled order.
fn subsample_indices(order: &[usize], fraction: f64) -> Result<&[usize]> {
    let keep = fraction_count(fraction, order.len());
    ensure!(keep > 0, "training set is empty after subsampling {} samples at {fraction}", order.len());
    Ok(&order[..keep])
}

/// Seeded subsample of an existing training set, for datasets that ship
/// with a separate test file.
pub fn subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    ensure!(fraction > 0.0 && fraction <= 1.0, "subsample fraction must lie in (0, 1], got {fraction}");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ds.select(subsample_indices(&order, fraction)?))
}

/// `min(batch, count)` distinct indices drawn uniformly.
pub fn minibatch_indices(rng: &mut impl Rng, count: usize, batch: usize) -> Vec<usize> {
    if batch >= count {
        return (0..count).collect();
    }
    sample(rng, count, batch).into_vec()
}
