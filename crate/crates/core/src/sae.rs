//! SAE parameters, activations, forward passes and the loss family.
//!
//! Codes are `z = act(W_enc x + b_enc)` and reconstructions
//! `x_hat = W_dec z + b_dec`. Batches are matrices with one sample per column.

use std::borrow::Cow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{check_capacity, Combinations};
use crate::error::{ensure, Error, Result};
use crate::numerics::{matrix_from_rows, matrix_to_rows, vector_from, Matrix, Vector};
use crate::par::{self, Exec};

/// Entries with magnitude at or below this count as zero in the L0 penalty.
pub const L0_EPS: f64 = 1e-12;

/// Samples per block in batched forward passes. Fixed so blocked results do
/// not depend on how blocks are scheduled.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Passes entries strictly greater than `tau`.
    JumpRelu { tau: f64 },
    /// Keeps the `k` largest entries, ties toward the lowest index.
    TopK { k: usize },
    /// Softmax mixture over all `k`-subsets at temperature `temperature`.
    /// Exact enumeration; only for small code dimensions.
    SoftTopK { k: usize, temperature: f64 },
}

impl Activation {
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            Activation::Relu => Ok(()),
            Activation::JumpRelu { tau } => {
                ensure!(tau.is_finite(), "JumpReLU threshold must be finite");
                Ok(())
            }
            Activation::TopK { k } => {
                ensure!(k >= 1 && k <= d, "TopK needs 1 <= k <= d, got k={k}, d={d}");
                Ok(())
            }
            Activation::SoftTopK { k, temperature } => {
                ensure!(k >= 1 && k <= d, "SoftTopK needs 1 <= k <= d, got k={k}, d={d}");
                ensure!(
                    temperature > 0.0 && temperature.is_finite(),
                    "SoftTopK temperature must be positive, got {temperature}"
                );
                check_capacity(d, k)?;
                Ok(())
            }
        }
    }

    /// Upper bound on the fraction of active code entries, if there is one.
    pub fn active_cap(&self, d: usize) -> Option<f64> {
        match *self {
            Activation::TopK { k } => Some(k as f64 / d as f64),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::JumpRelu { tau } => write!(f, "jumprelu:{tau}"),
            Activation::TopK { k } => write!(f, "topk:{k}"),
            Activation::SoftTopK { k, temperature } => write!(f, "softtopk:{k}:{temperature}"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Parses `relu`, `jumprelu:<tau>`, `topk:<k>` or `softtopk:<k>:<t>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::contract(format!("unrecognised activation `{s}`"));
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        let count = |p: &str| p.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["relu"] => Ok(Activation::Relu),
            ["jumprelu", tau] => Ok(Activation::JumpRelu { tau: num(tau)? }),
            ["topk", k] => Ok(Activation::TopK { k: count(k)? }),
            ["softtopk", k, t] => Ok(Activation::SoftTopK {
                k: count(k)?,
                temperature: num(t)?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SparsityPenalty {
    #[default]
    None,
    L1 { lambda: f64 },
    L0 { lambda: f64 },
}

impl SparsityPenalty {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsityPenalty::None => Ok(()),
            SparsityPenalty::L1 { lambda } | SparsityPenalty::L0 { lambda } => {
                ensure!(
                    lambda.is_finite() && lambda >= 0.0,
                    "sparsity lambda must be finite and non-negative, got {lambda}"
                );
                Ok(())
            }
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match *self {
            SparsityPenalty::None => 0.0,
            SparsityPenalty::L1 { lambda } => lambda * z.iter().map(|v| v.abs()).sum::<f64>(),
            SparsityPenalty::L0 { lambda } => {
                lambda * z.iter().filter(|v| v.abs() > L0_EPS).count() as f64
            }
        }
    }
}

impl fmt::Display for SparsityPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsityPenalty::None => write!(f, "none"),
            SparsityPenalty::L1 { lambda } => write!(f, "l1:{lambda}"),
            SparsityPenalty::L0 { lambda } => write!(f, "l0:{lambda}"),
        }
    }
}

impl FromStr for SparsityPenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::contract(format!("unrecognised sparsity penalty `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let pen = match parts.as_slice() {
            ["none"] => SparsityPenalty::None,
            ["l1", l] => SparsityPenalty::L1 {
                lambda: l.parse().map_err(|_| bad())?,
            },
            ["l0", l] => SparsityPenalty::L0 {
                lambda: l.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        pen.validate()?;
        Ok(pen)
    }
}

/// Weight decay on the two weight matrices: `enc * ||W_enc||_F^2 + dec * ||W_dec||_F^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AuxDecay {
    pub enc: f64,
    pub dec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Sum over samples of squared reconstruction error.
    pub reconstruction: f64,
    pub sparsity: f64,
    pub aux: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(reconstruction: f64, sparsity: f64, aux: f64) -> Self {
        Self {
            reconstruction,
            sparsity,
            aux,
            total: reconstruction + sparsity + aux,
        }
    }
}

/// Encoder `W_enc` (d x n), `b_enc` (d), decoder `W_dec` (n x d), `b_dec` (n).
///
/// Tied parameters keep a single matrix; the decoder weight is `W_enc^T`,
/// built on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    pub(crate) w_enc: Matrix,
    pub(crate) b_enc: Vector,
    pub(crate) w_dec: Option<Matrix>,
    pub(crate) b_dec: Vector,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    n: usize,
    d: usize,
    tied: bool,
    w_enc: Vec<f64>,
    b_enc: Vec<f64>,
    w_dec: Vec<f64>,
    b_dec: Vec<f64>,
}

impl SaeParams {
    pub fn new(w_enc: Matrix, b_enc: Vector, w_dec: Matrix, b_dec: Vector) -> Result<Self> {
        let (d, n) = w_enc.shape();
        ensure!(b_enc.len() == d, "b_enc has dim {}, expected {d}", b_enc.len());
        ensure!(
            w_dec.shape() == (n, d),
            "w_dec is {}x{}, expected {n}x{d}",
            w_dec.nrows(),
            w_dec.ncols()
        );
        ensure!(b_dec.len() == n, "b_dec has dim {}, expected {n}", b_dec.len());
        let p = Self {
            w_enc,
            b_enc,
            w_dec: Some(w_dec),
            b_dec,
        };
        p.check_finite()?;
        Ok(p)
    }

    pub fn new_tied(w_enc: Matrix, b_enc: Vector, b_dec: Vector) -> Result<Self> {
        let (d, n) = w_enc.shape();
        ensure!(b_enc.len() == d, "b_enc has dim {}, expected {d}", b_enc.len());
        ensure!(b_dec.len() == n, "b_dec has dim {}, expected {n}", b_dec.len());
        let p = Self {
            w_enc,
            b_enc,
            w_dec: None,
            b_dec,
        };
        p.check_finite()?;
        Ok(p)
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.w_enc.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite())
            && self
                .w_dec
                .as_ref()
                .is_none_or(|w| w.iter().all(|v| v.is_finite()));
        ensure!(finite, "SAE parameters must be finite");
        Ok(())
    }

    /// Uniform entries in `[-1/sqrt(n), 1/sqrt(n)]`, zero biases. With
    /// `unit_norm_dec` each decoder column is rescaled to unit length.
    pub fn init_uniform(
        n: usize,
        d: usize,
        tied: bool,
        unit_norm_dec: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = 1.0 / (n.max(1) as f64).sqrt();
        let w_enc = Matrix::from_fn(d, n, |_, _| rng.random_range(-scale..=scale));
        let w_dec = (!tied).then(|| {
            let mut w = Matrix::from_fn(n, d, |_, _| rng.random_range(-scale..=scale));
            if unit_norm_dec {
                normalize_columns(&mut w);
            }
            w
        });
        Self {
            w_enc,
            b_enc: Vector::zeros(d),
            w_dec,
            b_dec: Vector::zeros(n),
        }
    }

    /// Dictionary initialised near data points: encoder row `i` and decoder
    /// column `i` are a random training sample plus small uniform jitter.
    pub fn init_near_data(data: &Matrix, d: usize, jitter: f64, rng: &mut impl Rng) -> Result<Self> {
        let (n, count) = data.shape();
        ensure!(count > 0, "cannot initialise from an empty dataset");
        let mut w_enc = Matrix::zeros(d, n);
        let mut w_dec = Matrix::zeros(n, d);
        for i in 0..d {
            let src = rng.random_range(0..count);
            for j in 0..n {
                let v = data[(j, src)];
                w_enc[(i, j)] = v + rng.random_range(-jitter..=jitter);
                w_dec[(j, i)] = v + rng.random_range(-jitter..=jitter);
            }
        }
        Self::new(w_enc, Vector::zeros(d), w_dec, Vector::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn d(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn tied(&self) -> bool {
        self.w_dec.is_none()
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &Vector {
        &self.b_enc
    }

    pub fn w_dec(&self) -> Cow<'_, Matrix> {
        match &self.w_dec {
            Some(w) => Cow::Borrowed(w),
            None => Cow::Owned(self.w_enc.transpose()),
        }
    }

    pub fn b_dec(&self) -> &Vector {
        &self.b_dec
    }

    pub fn set_encoder(&mut self, w_enc: Matrix, b_enc: Vector) -> Result<()> {
        ensure!(
            w_enc.shape() == self.w_enc.shape() && b_enc.len() == self.b_enc.len(),
            "encoder shape change is not allowed"
        );
        self.w_enc = w_enc;
        self.b_enc = b_enc;
        Ok(())
    }

    /// Replaces the decoder. Tied parameters reject this: their decoder
    /// weight is owned by the encoder.
    pub fn set_decoder(&mut self, w_dec: Matrix, b_dec: Vector) -> Result<()> {
        ensure!(!self.tied(), "cannot set the decoder weight of tied parameters");
        ensure!(
            w_dec.shape() == (self.n(), self.d()) && b_dec.len() == self.n(),
            "decoder shape change is not allowed"
        );
        self.w_dec = Some(w_dec);
        self.b_dec = b_dec;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ParamsJson {
            n: self.n(),
            d: self.d(),
            tied: self.tied(),
            w_enc: matrix_to_rows(&self.w_enc),
            b_enc: self.b_enc.iter().copied().collect(),
            w_dec: matrix_to_rows(&self.w_dec()),
            b_dec: self.b_dec.iter().copied().collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsJson = serde_json::from_str(text)?;
        let w_enc = matrix_from_rows(doc.d, doc.n, &doc.w_enc)?;
        let b_enc = vector_from(&doc.b_enc)?;
        let b_dec = vector_from(&doc.b_dec)?;
        let w_dec = matrix_from_rows(doc.n, doc.d, &doc.w_dec)?;
        if doc.tied {
            ensure!(
                w_dec == w_enc.transpose(),
                "tied parameters must have w_dec equal to the transpose of w_enc"
            );
            Self::new_tied(w_enc, b_enc, b_dec)
        } else {
            Self::new(w_enc, b_enc, w_dec, b_dec)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn normalize_columns(w: &mut Matrix) {
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// Indices of the `k` largest entries, ties toward the lowest index, in
/// ascending index order.
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Subset weights of the soft TopK mixture, one per `k`-subset in
/// lexicographic order. Scores are shifted by their max before
/// exponentiating.
pub fn soft_topk_weights(v: &[f64], k: usize, temperature: f64) -> Result<Vec<f64>> {
    check_capacity(v.len(), k)?;
    let scores: Vec<f64> = Combinations::new(v.len(), k)
        .map(|s| s.iter().map(|&i| v[i]).sum::<f64>() / temperature)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn soft_topk(v: &[f64], k: usize, temperature: f64) -> Result<Vec<f64>> {
    let weights = soft_topk_weights(v, k, temperature)?;
    // Each coordinate keeps v_i times the total weight of subsets containing i.
    let mut mass = vec![0.0; v.len()];
    for (subset, w) in Combinations::new(v.len(), k).zip(weights) {
        for i in subset {
            mass[i] += w;
        }
    }
    Ok(v.iter().zip(mass).map(|(x, m)| x * m).collect())
}

/// Applies `act` in place to a pre-activation slice.
fn activate_in_place(v: &mut [f64], act: &Activation) -> Result<()> {
    match *act {
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
        Activation::JumpRelu { tau } => v.iter_mut().for_each(|x| {
            if *x <= tau {
                *x = 0.0
            }
        }),
        Activation::TopK { k } => {
            let keep = top_k_indices(v, k);
            let mut next = keep.iter().peekable();
            for (i, x) in v.iter_mut().enumerate() {
                if next.peek() == Some(&&i) {
                    next.next();
                } else {
                    *x = 0.0;
                }
            }
        }
        Activation::SoftTopK { k, temperature } => {
            let out = soft_topk(v, k, temperature)?;
            v.copy_from_slice(&out);
        }
    }
    Ok(())
}

pub fn apply_activation(v: &Vector, act: &Activation) -> Result<Vector> {
    act.validate(v.len())?;
    let mut out = v.clone();
    activate_in_place(out.as_mut_slice(), act)?;
    Ok(out)
}

/// Indices of strictly nonzero entries, ascending.
pub fn support(z: &[f64]) -> Vec<usize> {
    z.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn encode(x: &Vector, params: &SaeParams, act: &Activation) -> Result<Vector> {
    ensure!(
        x.len() == params.n(),
        "input has dim {}, encoder expects {}",
        x.len(),
        params.n()
    );
    apply_activation(&(params.w_enc() * x + params.b_enc()), act)
}

pub fn decode(z: &Vector, params: &SaeParams) -> Result<Vector> {
    ensure!(
        z.len() == params.d(),
        "code has dim {}, decoder expects {}",
        z.len(),
        params.d()
    );
    Ok(params.w_dec().as_ref() * z + params.b_dec())
}

/// Pre-activations `W_enc X + b_enc 1^T` for a batch (one sample per column).
pub(crate) fn pre_activations(params: &SaeParams, x: &Matrix) -> Matrix {
    let mut pre = params.w_enc() * x;
    for mut col in pre.column_iter_mut() {
        col += params.b_enc();
    }
    pre
}

/// Codes for a batch, one column per sample.
pub fn encode_batch(params: &SaeParams, act: &Activation, x: &Matrix) -> Result<Matrix> {
    ensure!(
        x.nrows() == params.n(),
        "batch has dim {}, encoder expects {}",
        x.nrows(),
        params.n()
    );
    act.validate(params.d())?;
    let mut z = pre_activations(params, x);
    for mut col in z.column_iter_mut() {
        activate_in_place(col.as_mut_slice(), act)?;
    }
    Ok(z)
}

/// Reconstructions for a batch of codes.
pub fn decode_batch(params: &SaeParams, z: &Matrix) -> Matrix {
    let mut out = params.w_dec().as_ref() * z;
    for mut col in out.column_iter_mut() {
        col += params.b_dec();
    }
    out
}

/// Per-sample statistics of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub sq_err: f64,
    pub l1: f64,
    pub active: usize,
}

/// Forward pass over every column of `data`, processed in fixed-size blocks
/// that may run concurrently. Results are in sample order.
pub fn sample_stats(
    params: &SaeParams,
    act: &Activation,
    data: &Matrix,
    exec: Exec,
) -> Result<Vec<SampleStats>> {
    ensure!(
        data.nrows() == params.n(),
        "data has dim {}, encoder expects {}",
        data.nrows(),
        params.n()
    );
    act.validate(params.d())?;
    let count = data.ncols();
    let blocks = count.div_ceil(BLOCK);
    let w_dec = params.w_dec();
    let per_block = par::map_indexed(exec, blocks, |b| -> Result<Vec<SampleStats>> {
        let start = b * BLOCK;
        let width = BLOCK.min(count - start);
        let x = data.columns(start, width).into_owned();
        let z = encode_batch(params, act, &x)?;
        let mut recon = w_dec.as_ref() * &z;
        for mut col in recon.column_iter_mut() {
            col += params.b_dec();
        }
        Ok((0..width)
            .map(|c| SampleStats {
                sq_err: (recon.column(c) - x.column(c)).norm_squared(),
                l1: z.column(c).iter().map(|v| v.abs()).sum(),
                active: z.column(c).iter().filter(|v| **v != 0.0).count(),
            })
            .collect())
    });
    let mut out = Vec::with_capacity(count);
    for block in per_block {
        out.extend(block?);
    }
    Ok(out)
}

/// Reconstruction + sparsity + weight-decay loss, summed over samples.
pub fn batch_loss(
    data: &Matrix,
    params: &SaeParams,
    act: &Activation,
    pen: &SparsityPenalty,
    aux: AuxDecay,
) -> Result<LossReport> {
    batch_loss_with(data, params, act, pen, aux, Exec::default())
}

pub fn batch_loss_with(
    data: &Matrix,
    params: &SaeParams,
    act: &Activation,
    pen: &SparsityPenalty,
    aux: AuxDecay,
    exec: Exec,
) -> Result<LossReport> {
    ensure!(data.ncols() > 0, "batch_loss needs at least one sample");
    pen.validate()?;
    let reconstruction;
    let sparsity;
    match pen {
        SparsityPenalty::L0 { .. } => {
            // The L0 count needs the codes themselves, not the forward summary.
            let z = encode_batch(params, act, data)?;
            let recon = decode_batch(params, &z);
            let errs: Vec<f64> = (0..data.ncols())
                .map(|c| (recon.column(c) - data.column(c)).norm_squared())
                .collect();
            let pens: Vec<f64> = z.column_iter().map(|c| pen.value(c.as_slice())).collect();
            reconstruction = par::ordered_sum(&errs);
            sparsity = par::ordered_sum(&pens);
        }
        _ => {
            let stats = sample_stats(params, act, data, exec)?;
            let errs: Vec<f64> = stats.iter().map(|s| s.sq_err).collect();
            reconstruction = par::ordered_sum(&errs);
            sparsity = match pen {
                SparsityPenalty::L1 { lambda } => {
                    lambda * par::ordered_sum(&stats.iter().map(|s| s.l1).collect::<Vec<_>>())
                }
                _ => 0.0,
            };
        }
    }
    let aux_term = aux.enc * params.w_enc().norm_squared() + aux.dec * params.w_dec().norm_squared();
    Ok(LossReport::new(reconstruction, sparsity, aux_term))
}
