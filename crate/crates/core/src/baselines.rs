//! Classical piecewise autoencoders: k-means and local PCA.
//!
//! The k-means autoencoder maps each point to its nearest centroid, so its
//! summed squared error is exactly the k-means objective. The optimal
//! piecewise-affine autoencoder on a fixed partition keeps, per region, the
//! mean plus a projection onto the top covariance eigenvectors:
//! `G(x) = x_bar + U U^T (x - x_bar) = U U^T x + c` with `c = (I - U U^T) x_bar`.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{matrix_to_rows, sym_eig, Matrix, Vector};
use crate::par::{self, Exec};

/// Eigenvalues above `-NEG_EIG_TOL` are clamped to zero in [`optimal_rank`].
const NEG_EIG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<Vector>,
    /// Region index per training sample.
    pub assignment: Vec<usize>,
    /// Objective after initial assignment and after every Lloyd half-step.
    pub objective_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn objective(&self, data: &Matrix) -> f64 {
        objective(data, &self.centroids, &self.assignment)
    }
}

/// Nearest centroid, lowest index on ties.
pub fn nearest_centroid(x: &[f64], centroids: &[Vector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d: f64 = x.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn assign_all(data: &Matrix, centroids: &[Vector]) -> Vec<usize> {
    data.column_iter()
        .map(|x| nearest_centroid(x.as_slice(), centroids))
        .collect()
}

fn objective(data: &Matrix, centroids: &[Vector], assignment: &[usize]) -> f64 {
    data.column_iter()
        .zip(assignment)
        .map(|(x, &a)| (x - &centroids[a]).norm_squared())
        .sum()
}

fn kmeans_pp_init(data: &Matrix, k: usize, rng: &mut impl Rng) -> Vec<Vector> {
    let count = data.ncols();
    let mut centroids = vec![data.column(rng.random_range(0..count)).into_owned()];
    let mut dist: Vec<f64> = data
        .column_iter()
        .map(|x| (x - &centroids[0]).norm_squared())
        .collect();
    while centroids.len() < k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.random_range(0..count),
        };
        let c = data.column(pick).into_owned();
        for (d, x) in dist.iter_mut().zip(data.column_iter()) {
            *d = d.min((x - &c).norm_squared());
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from a seeded k-means++ start. Stops when assignments
/// no longer change or after `max_iter` updates. An empty cluster takes the
/// point farthest from its current centroid (among clusters with more than
/// one member).
pub fn kmeans_fit(data: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel> {
    let count = data.ncols();
    ensure!(k >= 1, "k must be at least 1");
    ensure!(k <= count, "k = {k} exceeds the sample count {count}");
    ensure!(max_iter >= 1, "max_iter must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(data, k, &mut rng);
    let mut assignment = assign_all(data, &centroids);
    let mut trace = vec![objective(data, &centroids, &assignment)];

    for _ in 0..max_iter {
        reseed_empty(data, &centroids, &mut assignment, k);
        centroids = region_means(data, &assignment, k);
        trace.push(objective(data, &centroids, &assignment));
        let next = assign_all(data, &centroids);
        let done = next == assignment;
        assignment = next;
        trace.push(objective(data, &centroids, &assignment));
        if done {
            break;
        }
    }
    Ok(KMeansModel {
        centroids,
        assignment,
        objective_trace: trace,
    })
}

fn reseed_empty(data: &Matrix, centroids: &[Vector], assignment: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (r, x) in data.column_iter().enumerate() {
            let a = assignment[r];
            if sizes[a] < 2 {
                continue;
            }
            let d = (x - &centroids[a]).norm_squared();
            if d > far_d {
                far_d = d;
                far = Some(r);
            }
        }
        if let Some(r) = far {
            sizes[assignment[r]] -= 1;
            assignment[r] = j;
            sizes[j] = 1;
        }
    }
}

fn region_means(data: &Matrix, assignment: &[usize], k: usize) -> Vec<Vector> {
    let mut sums = vec![Vector::zeros(data.nrows()); k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.column_iter().zip(assignment) {
        sums[a] += x;
        counts[a] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { s / c as f64 } else { s })
        .collect()
}

/// The k-means autoencoder: the nearest centroid.
pub fn kmeans_autoencode(x: &Vector, model: &KMeansModel) -> Vector {
    model.centroids[nearest_centroid(x.as_slice(), &model.centroids)].clone()
}

/// Mean and population covariance `(1/N) sum (x - x_bar)(x - x_bar)^T` of the
/// columns of `region`.
pub fn covariance(region: &Matrix) -> Result<(Vector, Matrix)> {
    let count = region.ncols();
    ensure!(count > 0, "covariance of an empty region");
    let mean = region.column_sum() / count as f64;
    let mut centered = region.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = (&centered * centered.transpose()) / count as f64;
    Ok((mean, cov))
}

/// Largest `K` with `eigenvalues[K-1] > lambda`. Ties at `lambda` are
/// excluded.
pub fn optimal_rank(eigenvalues: &[f64], lambda: f64) -> Result<usize> {
    ensure!(
        eigenvalues.windows(2).all(|w| w[0] >= w[1]),
        "eigenvalues must be sorted in descending order"
    );
    ensure!(
        eigenvalues.iter().all(|&e| e >= -NEG_EIG_TOL),
        "eigenvalues of a covariance must be non-negative"
    );
    Ok(eigenvalues.iter().take_while(|&&e| e.max(0.0) > lambda).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RankRule {
    Fixed { k: usize },
    Adaptive { lambda: f64 },
}

/// One region of a piecewise-affine autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAffine {
    pub mean: Vector,
    /// `n x rank`, orthonormal columns.
    pub basis: Matrix,
    pub offset: Vector,
    pub rank: usize,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub count: usize,
}

impl LocalAffine {
    /// Builds the region map from a mean and basis, with `c = (I - U U^T) x_bar`.
    pub fn from_basis(mean: Vector, basis: Matrix, eigenvalues: Vec<f64>, count: usize) -> Self {
        let offset = &mean - &basis * (basis.transpose() * &mean);
        let rank = basis.ncols();
        Self {
            mean,
            basis,
            offset,
            rank,
            eigenvalues,
            count,
        }
    }

    /// `U U^T x + c`.
    pub fn apply_affine(&self, x: &Vector) -> Vector {
        &self.basis * (self.basis.transpose() * x) + &self.offset
    }

    /// `x_bar + sum_l (xi_l . (x - x_bar)) xi_l`.
    pub fn apply_projection(&self, x: &Vector) -> Vector {
        let centered = x - &self.mean;
        let mut out = self.mean.clone();
        for xi in self.basis.column_iter() {
            out += xi * xi.dot(&centered);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineAE {
    pub regions: Vec<LocalAffine>,
}

#[derive(Serialize)]
struct RegionJson {
    mean: Vec<f64>,
    rank: usize,
    /// Row-major `n x rank`.
    basis: Vec<f64>,
    offset: Vec<f64>,
    eigenvalues: Vec<f64>,
    count: usize,
}

impl PiecewiseAffineAE {
    pub fn to_json(&self) -> Result<String> {
        let regions: Vec<RegionJson> = self
            .regions
            .iter()
            .map(|r| RegionJson {
                mean: r.mean.iter().copied().collect(),
                rank: r.rank,
                basis: matrix_to_rows(&r.basis),
                offset: r.offset.iter().copied().collect(),
                eigenvalues: r.eigenvalues.clone(),
                count: r.count,
            })
            .collect();
        Ok(serde_json::to_string(&serde_json::json!({ "regions": regions }))?)
    }
}

pub(crate) fn region_columns(data: &Matrix, regions: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    ensure!(
        regions.len() == data.ncols(),
        "{} region labels for {} samples",
        regions.len(),
        data.ncols()
    );
    let mut members = vec![Vec::new(); k];
    for (r, &i) in regions.iter().enumerate() {
        ensure!(i < k, "region index {i} out of range for {k} regions");
        members[i].push(r);
    }
    Ok(members)
}

/// Mean plus top-eigenvector basis per region, rank chosen by `rule`.
pub fn local_pca_fit(
    data: &Matrix,
    regions: &[usize],
    k: usize,
    rule: RankRule,
) -> Result<PiecewiseAffineAE> {
    local_pca_fit_with(data, regions, k, rule, Exec::default())
}

pub fn local_pca_fit_with(
    data: &Matrix,
    regions: &[usize],
    k: usize,
    rule: RankRule,
    exec: Exec,
) -> Result<PiecewiseAffineAE> {
    let n = data.nrows();
    let members = region_columns(data, regions, k)?;
    if let RankRule::Fixed { k: rank } = rule {
        ensure!(rank <= n, "fixed rank {rank} exceeds the dimension {n}");
    }
    if let RankRule::Adaptive { lambda } = rule {
        ensure!(lambda >= 0.0 && lambda.is_finite(), "lambda must be non-negative");
    }
    for (i, m) in members.iter().enumerate() {
        ensure!(!m.is_empty(), "region {i} has no samples");
    }
    let fitted = par::map_slice(exec, &members, |cols| -> Result<LocalAffine> {
        let region = data.select_columns(cols.iter());
        let (mean, cov) = covariance(&region)?;
        let eig = sym_eig(&cov)?;
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let rank = match rule {
            RankRule::Fixed { k } => k,
            RankRule::Adaptive { lambda } => optimal_rank(&eigenvalues, lambda)?,
        };
        let basis = eig.eigenvectors.columns(0, rank).into_owned();
        Ok(LocalAffine::from_basis(mean, basis, eigenvalues, cols.len()))
    });
    Ok(PiecewiseAffineAE {
        regions: fitted.into_iter().collect::<Result<_>>()?,
    })
}

pub fn pa_autoencode(x: &Vector, region: usize, model: &PiecewiseAffineAE) -> Result<Vector> {
    ensure!(
        region < model.regions.len(),
        "region {region} out of range for {} regions",
        model.regions.len()
    );
    Ok(model.regions[region].apply_projection(x))
}

/// `sum ||x - G(x)||^2 + lambda sum_i N_i K_i`, with `G` in its affine form
/// so perturbed (non-optimal) parameters are scored correctly.
pub fn pa_loss(data: &Matrix, regions: &[usize], model: &PiecewiseAffineAE, lambda: f64) -> Result<f64> {
    let k = model.regions.len();
    let members = region_columns(data, regions, k)?;
    let mut total = 0.0;
    for (m, reg) in members.iter().zip(&model.regions) {
        for &r in m {
            let x = data.column(r).into_owned();
            total += (&x - reg.apply_affine(&x)).norm_squared();
        }
        total += lambda * (m.len() * reg.rank) as f64;
    }
    Ok(total)
}

/// Eigenvalue form of the optimal loss:
/// `sum_i [ sum ||x - x_bar_i||^2 + N_i K_i (lambda - mean_{l <= K_i} lambda_l) ]`.
/// Only meaningful for a model fitted by [`local_pca_fit`] on this partition.
pub fn pa_loss_closed_form(
    data: &Matrix,
    regions: &[usize],
    model: &PiecewiseAffineAE,
    lambda: f64,
) -> Result<f64> {
    let members = region_columns(data, regions, model.regions.len())?;
    let mut total = 0.0;
    for (m, reg) in members.iter().zip(&model.regions) {
        let spread: f64 = m
            .iter()
            .map(|&r| (data.column(r) - &reg.mean).norm_squared())
            .sum();
        let top: f64 = reg.eigenvalues[..reg.rank].iter().sum();
        total += spread + m.len() as f64 * (reg.rank as f64 * lambda - top);
    }
    Ok(total)
}
