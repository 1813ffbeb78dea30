//! Spline geometry of SAE encoders.
//!
//! A TopK encoder is affine on the cells of a K-th-order power diagram whose
//! centroids are the encoder rows and whose weights are
//! `alpha_i = 2 b_i + ||w_i||^2`. Every K-th-order diagram is also an ordinary
//! power diagram over the `C(d, K)` subset means.
//!
//! Power functions `P_i(x) = -2 mu_i . x + ||mu_i||^2 - alpha_i` are compared
//! exactly with the lowest index winning ties; there is no epsilon band.

mod render;

use std::fmt;
use std::str::FromStr;

use crate::combinatorics::{binomial, check_capacity, Combinations};
use crate::error::{ensure, Error, Result};
use crate::numerics::{lstsq, Matrix, Vector, DEFAULT_REL_TOL};
use crate::sae::SaeParams;

pub use render::{render_cells, render_cells_with, BBox, CellGrid};

/// Sorted, distinct code indices naming a cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellLabel(Vec<usize>);

impl CellLabel {
    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        indices.sort_unstable();
        ensure!(
            indices.windows(2).all(|w| w[0] != w[1]),
            "cell label has repeated indices: {indices:?}"
        );
        ensure!(
            indices.iter().all(|&i| i < d),
            "cell label {indices:?} has an index outside 0..{d}"
        );
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CellLabel {
    /// Dash-joined indices, e.g. `0-3-5`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for CellLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(Self(Vec::new()));
        }
        let indices = s
            .split('-')
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::contract(format!("bad cell label `{s}`")))?;
        Self::new(indices, usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionKind {
    JumpRelu { tau: f64 },
    TopK,
}

/// The open set `{x : H x > c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceRegion {
    pub h: Matrix,
    pub c: Vector,
}

impl HalfspaceRegion {
    pub fn contains(&self, x: &Vector) -> bool {
        let hx = &self.h * x;
        hx.iter().zip(self.c.iter()).all(|(a, b)| a > b)
    }

    /// A zero row in `H` means the open set is not the interior of the closed
    /// polyhedron `{H x >= c}`: it is either empty or everything, depending
    /// on the sign of the matching `c` entry. This happens for a zero encoder
    /// row (JumpReLU) or two identical encoder rows (TopK).
    pub fn is_degenerate(&self) -> bool {
        self.h.row_iter().any(|r| r.iter().all(|v| *v == 0.0))
    }
}

/// Half-space description of the region where the code support is exactly `s`.
pub fn region_matrix(
    s: &CellLabel,
    params: &SaeParams,
    kind: RegionKind,
) -> Result<HalfspaceRegion> {
    let d = params.d();
    let n = params.n();
    ensure!(
        s.indices().iter().all(|&i| i < d),
        "cell label {s} out of range for d={d}"
    );
    let w = params.w_enc();
    let b = params.b_enc();
    let in_s = |i: usize| s.indices().binary_search(&i).is_ok();
    match kind {
        RegionKind::JumpRelu { tau } => {
            let mut h = Matrix::zeros(d, n);
            let mut c = Vector::zeros(d);
            for i in 0..d {
                let sign = if in_s(i) { 1.0 } else { -1.0 };
                h.set_row(i, &(w.row(i) * sign));
                c[i] = sign * (tau - b[i]);
            }
            Ok(HalfspaceRegion { h, c })
        }
        RegionKind::TopK => {
            let k = s.len();
            ensure!(k >= 1 && k <= d, "TopK region needs 1 <= |S| <= d, got |S|={k}");
            let outside: Vec<usize> = (0..d).filter(|&j| !in_s(j)).collect();
            let rows = k * outside.len();
            let mut h = Matrix::zeros(rows, n);
            let mut c = Vector::zeros(rows);
            let mut r = 0;
            for &i in s.indices() {
                for &j in &outside {
                    h.set_row(r, &(w.row(i) - w.row(j)));
                    c[r] = -(b[i] - b[j]);
                    r += 1;
                }
            }
            Ok(HalfspaceRegion { h, c })
        }
    }
}

/// Ordinary (first-order) power diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDiagram {
    pub centroids: Vec<Vector>,
    pub weights: Vec<f64>,
}

impl PowerDiagram {
    pub fn new(centroids: Vec<Vector>, weights: Vec<f64>) -> Result<Self> {
        ensure!(!centroids.is_empty(), "power diagram needs at least one centroid");
        ensure!(
            centroids.len() == weights.len(),
            "{} centroids but {} weights",
            centroids.len(),
            weights.len()
        );
        let n = centroids[0].len();
        ensure!(
            centroids.iter().all(|c| c.len() == n),
            "centroids must share one dimension"
        );
        Ok(Self { centroids, weights })
    }

    /// Index of the cell containing `x` (smallest power, lowest index on ties).
    pub fn cell_of(&self, x: &Vector) -> usize {
        let mut best = 0;
        let mut best_p = f64::INFINITY;
        for (i, (mu, &alpha)) in self.centroids.iter().zip(&self.weights).enumerate() {
            let p = power(x, mu, alpha);
            if p < best_p {
                best_p = p;
                best = i;
            }
        }
        best
    }
}

/// Centroids, weights, and order `K` of a K-th-order power diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct KthOrderPowerDiagram {
    pub centroids: Vec<Vector>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl KthOrderPowerDiagram {
    pub fn new(centroids: Vec<Vector>, weights: Vec<f64>, order: usize) -> Result<Self> {
        let base = PowerDiagram::new(centroids, weights)?;
        ensure!(
            order >= 1 && order <= base.centroids.len(),
            "order must lie in 1..={}, got {order}",
            base.centroids.len()
        );
        Ok(Self {
            centroids: base.centroids,
            weights: base.weights,
            order,
        })
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn size(&self) -> usize {
        self.centroids.len()
    }
}

/// `P(x) = -2 mu . x + ||mu||^2 - alpha`; equals `||x - mu||^2 - alpha - ||x||^2`.
pub fn power(x: &Vector, mu: &Vector, alpha: f64) -> f64 {
    -2.0 * mu.dot(x) + mu.norm_squared() - alpha
}

/// Diagram of a TopK encoder: `mu_i` is row `i` of `W_enc`,
/// `alpha_i = 2 b_i + ||mu_i||^2`.
pub fn enc_to_diagram(params: &SaeParams, k: usize) -> Result<KthOrderPowerDiagram> {
    let w = params.w_enc();
    let centroids: Vec<Vector> = (0..params.d()).map(|i| w.row(i).transpose()).collect();
    let weights = centroids
        .iter()
        .zip(params.b_enc().iter())
        .map(|(mu, b)| 2.0 * b + mu.norm_squared())
        .collect();
    KthOrderPowerDiagram::new(centroids, weights, k)
}

/// Inverse of [`enc_to_diagram`]: `W_enc` row `i` is `mu_i`,
/// `b_i = alpha_i / 2 - ||mu_i||^2 / 2`.
pub fn diagram_to_enc(diag: &KthOrderPowerDiagram) -> (Matrix, Vector) {
    let d = diag.size();
    let n = diag.dim();
    let mut w = Matrix::zeros(d, n);
    let mut b = Vector::zeros(d);
    for (i, (mu, alpha)) in diag.centroids.iter().zip(&diag.weights).enumerate() {
        w.set_row(i, &mu.transpose());
        b[i] = 0.5 * alpha - 0.5 * mu.norm_squared();
    }
    (w, b)
}

/// Ordinary power diagram with one cell per `K`-subset, in lexicographic
/// subset order: `nu_S` is the mean of the subset's centroids and
/// `beta_S = ||nu_S||^2 - mean ||mu_i||^2 + mean alpha_i`.
pub fn reduce_to_power(diag: &KthOrderPowerDiagram) -> Result<(PowerDiagram, Vec<CellLabel>)> {
    let d = diag.size();
    let k = diag.order;
    let count = check_capacity(d, k)? as usize;
    let kf = k as f64;
    let mut centroids = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for subset in Combinations::new(d, k) {
        let mut nu = Vector::zeros(diag.dim());
        let mut sq = 0.0;
        let mut alpha = 0.0;
        for &i in &subset {
            nu += &diag.centroids[i];
            sq += diag.centroids[i].norm_squared();
            alpha += diag.weights[i];
        }
        nu /= kf;
        weights.push(nu.norm_squared() - sq / kf + alpha / kf);
        centroids.push(nu);
        labels.push(CellLabel(subset));
    }
    Ok((PowerDiagram { centroids, weights }, labels))
}

/// K-th-order cell containing `x`: the `K` indices with the smallest power,
/// ties toward the lowest index.
pub fn cell_of(x: &Vector, diag: &KthOrderPowerDiagram) -> CellLabel {
    let powers: Vec<f64> = diag
        .centroids
        .iter()
        .zip(&diag.weights)
        .map(|(mu, &a)| power(x, mu, a))
        .collect();
    let mut idx: Vec<usize> = (0..powers.len()).collect();
    idx.sort_by(|&a, &b| powers[a].total_cmp(&powers[b]).then(a.cmp(&b)));
    idx.truncate(diag.order);
    idx.sort_unstable();
    CellLabel(idx)
}

/// Finds `k` points whose lexicographically ordered pairwise means best match
/// `targets` in least squares. Returns the points and the Frobenius misfit.
pub fn fit_second_order(targets: &[Vector]) -> Result<(Vec<Vector>, f64)> {
    let m = targets.len();
    let k = (2..=m + 1)
        .find(|&k| binomial(k, 2) == Some(m as u64))
        .ok_or_else(|| Error::contract(format!("{m} targets is not C(k, 2) for any k >= 2")))?;
    let n = targets[0].len();
    ensure!(
        targets.iter().all(|t| t.len() == n),
        "targets must share one dimension"
    );
    let mut a = Matrix::zeros(m, k);
    for (row, pair) in Combinations::new(k, 2).enumerate() {
        a[(row, pair[0])] = 0.5;
        a[(row, pair[1])] = 0.5;
    }
    let mut t = Matrix::zeros(m, n);
    for (row, target) in targets.iter().enumerate() {
        t.set_row(row, &target.transpose());
    }
    let points = lstsq(&a, &t, DEFAULT_REL_TOL)?;
    let residual = (&a * &points - &t).norm();
    let centroids = (0..k).map(|i| points.row(i).transpose()).collect();
    Ok((centroids, residual))
}

/// Voronoi centroids in one extra dimension whose `z = 0` slice is `diag`.
/// Weights are shifted by `max alpha` so they are all non-positive, then
/// `zeta_i = sqrt(-alpha_i')`.
pub fn lift_to_voronoi(diag: &PowerDiagram) -> Vec<Vector> {
    let shift = diag.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    diag.centroids
        .iter()
        .zip(&diag.weights)
        .map(|(mu, &alpha)| {
            let zeta = (shift - alpha).max(0.0).sqrt();
            let mut lifted = Vector::zeros(mu.len() + 1);
            lifted.rows_mut(0, mu.len()).copy_from(mu);
            lifted[mu.len()] = zeta;
            lifted
        })
        .collect()
}

/// Index of the nearest point in plain Euclidean distance, lowest index on ties.
pub fn nearest(x: &Vector, points: &[Vector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (x - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
