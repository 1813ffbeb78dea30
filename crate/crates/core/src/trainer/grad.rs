//! Minibatch gradients of the reconstruction and sparsity terms.

use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Vector};
use crate::par::{self, Exec};
use crate::sae::{top_k_indices, Activation, SaeParams, SparsityPenalty};

const BLOCK: usize = 256;

/// Gradient blocks for an untied parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w_enc: Matrix,
    pub b_enc: Vector,
    pub w_dec: Matrix,
    pub b_dec: Vector,
}

impl Grads {
    fn zeros(n: usize, d: usize) -> Self {
        Self {
            w_enc: Matrix::zeros(d, n),
            b_enc: Vector::zeros(d),
            w_dec: Matrix::zeros(n, d),
            b_dec: Vector::zeros(n),
        }
    }

    fn add(&mut self, other: &Grads) {
        self.w_enc += &other.w_enc;
        self.b_enc += &other.b_enc;
        self.w_dec += &other.w_dec;
        self.b_dec += &other.b_dec;
    }
}

/// Entries that pass the activation. TopK keeps its winners even when they
/// are zero or negative.
pub(crate) fn active_mask(pre: &[f64], act: &Activation) -> Result<Vec<bool>> {
    Ok(match *act {
        Activation::Relu => pre.iter().map(|&v| v > 0.0).collect(),
        Activation::JumpRelu { tau } => pre.iter().map(|&v| v > tau).collect(),
        Activation::TopK { k } => {
            let mut mask = vec![false; pre.len()];
            for i in top_k_indices(pre, k) {
                mask[i] = true;
            }
            mask
        }
        Activation::SoftTopK { .. } => {
            return Err(crate::error::Error::contract(
                "soft TopK has no training gradient; train with TopK and evaluate with soft TopK",
            ))
        }
    })
}

/// Gradient of `scale * sum_r (||W_dec z^r + b_dec - x^r||^2 + penalty(z^r))`
/// over the columns of `x`. The active set is treated as locally constant.
/// Blocks of columns may be processed concurrently; partial sums are added
/// in block order.
pub fn data_gradient(
    params: &SaeParams,
    act: &Activation,
    pen: &SparsityPenalty,
    x: &Matrix,
    scale: f64,
    exec: Exec,
) -> Result<Grads> {
    ensure!(x.nrows() == params.n(), "batch has dim {}, model expects {}", x.nrows(), params.n());
    act.validate(params.d())?;
    let (n, d) = (params.n(), params.d());
    let count = x.ncols();
    let w_dec = params.w_dec();
    let l1 = match *pen {
        SparsityPenalty::L1 { lambda } => lambda,
        _ => 0.0,
    };
    let blocks = count.div_ceil(BLOCK);
    let partial = par::map_indexed(exec, blocks, |blk| -> Result<Grads> {
        let start = blk * BLOCK;
        let width = BLOCK.min(count - start);
        let xb = x.columns(start, width);
        let mut z = params.w_enc() * xb;
        let mut mask = Matrix::zeros(d, width);
        for (c, mut col) in z.column_iter_mut().enumerate() {
            col += params.b_enc();
            let keep = active_mask(col.as_slice(), act)?;
            for (i, k) in keep.into_iter().enumerate() {
                if k {
                    mask[(i, c)] = 1.0;
                } else {
                    col[i] = 0.0;
                }
            }
        }
        let mut resid = w_dec.as_ref() * &z - xb;
        for mut col in resid.column_iter_mut() {
            col += params.b_dec();
        }
        resid *= 2.0 * scale;
        let mut dz = w_dec.transpose() * &resid;
        if l1 > 0.0 {
            dz += z.map(|v| scale * l1 * sign(v));
        }
        let dpre = dz.component_mul(&mask);
        Ok(Grads {
            w_enc: &dpre * xb.transpose(),
            b_enc: dpre.column_sum(),
            w_dec: &resid * z.transpose(),
            b_dec: resid.column_sum(),
        })
    });
    let mut total = Grads::zeros(n, d);
    for g in partial {
        total.add(&g?);
    }
    Ok(total)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
