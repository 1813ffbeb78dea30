//! Exact minimiser of the decoder subproblem
//! `sum_r ||W z^r + b - x^r||^2 + mu ||W - W_t||_F^2 + nu ||b - b_t||^2 + alpha ||W||_F^2 + beta ||b||^2`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{pinv, Matrix, Vector, DEFAULT_REL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecoderReg {
    pub mu: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl DecoderReg {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("nu", self.nu), ("alpha", self.alpha), ("beta", self.beta)] {
            ensure!(v.is_finite() && v >= 0.0, "decoder {name} must be finite and non-negative, got {v}");
        }
        Ok(())
    }
}

fn check_shapes(codes: &Matrix, data: &Matrix, prev_w: &Matrix, prev_b: &Vector) -> Result<()> {
    let (d, count) = codes.shape();
    let n = data.nrows();
    ensure!(count >= 1, "decoder solve needs at least one sample");
    ensure!(
        data.ncols() == count,
        "{} codes but {} data samples",
        count,
        data.ncols()
    );
    ensure!(
        prev_w.shape() == (n, d),
        "previous decoder is {}x{}, expected {n}x{d}",
        prev_w.nrows(),
        prev_w.ncols()
    );
    ensure!(prev_b.len() == n, "previous decoder bias has dim {}, expected {n}", prev_b.len());
    Ok(())
}

/// The centred code and target matrices with the two extra columns carrying
/// the `nu` and `beta` terms: `Psi` is `d x (N+2)`, `Phi` is `n x (N+2)`.
fn centred_system(codes: &Matrix, data: &Matrix, prev_b: &Vector, reg: DecoderReg) -> (Matrix, Matrix, Vector, Vector) {
    let count = codes.ncols();
    let nf = count as f64;
    let denom = nf + reg.beta + reg.nu;
    let z_bar = codes.column_mean();
    let x_bar = data.column_mean();
    let z_shift = &z_bar * (nf / denom);
    let x_shift = &x_bar * (nf / denom) + prev_b * (reg.nu / denom);

    let mut psi = Matrix::zeros(codes.nrows(), count + 2);
    let mut phi = Matrix::zeros(data.nrows(), count + 2);
    for r in 0..count {
        psi.set_column(r, &(codes.column(r) - &z_shift));
        phi.set_column(r, &(data.column(r) - &x_shift));
    }
    let nz = &z_bar * nf;
    let nx = &x_bar * nf;
    let sn = reg.nu.sqrt() / denom;
    psi.set_column(count, &(&nz * sn));
    phi.set_column(count, &((&nx - prev_b * (nf + reg.beta)) * sn));
    let sb = reg.beta.sqrt() / denom;
    psi.set_column(count + 1, &(&nz * sb));
    phi.set_column(count + 1, &((&nx + prev_b * reg.nu) * sb));
    (psi, phi, z_bar, x_bar)
}

fn bias_from(w: &Matrix, z_bar: &Vector, x_bar: &Vector, prev_b: &Vector, count: usize, reg: DecoderReg) -> Vector {
    let nf = count as f64;
    let denom = nf + reg.beta + reg.nu;
    prev_b * (reg.nu / denom) + (x_bar - w * z_bar) * (nf / denom)
}

/// Closed-form decoder. Uses the normal equations when `alpha + mu > 0`
/// and the padded pseudoinverse otherwise.
pub fn decoder_closed_form(
    codes: &Matrix,
    data: &Matrix,
    prev_w: &Matrix,
    prev_b: &Vector,
    reg: DecoderReg,
) -> Result<(Matrix, Vector)> {
    if reg.alpha + reg.mu > 0.0 {
        decoder_closed_form_normal(codes, data, prev_w, prev_b, reg)
    } else {
        decoder_closed_form_padded(codes, data, prev_w, prev_b, reg)
    }
}

/// `W = [Phi, sqrt(mu) W_t, 0] [Psi, sqrt(mu) I, sqrt(alpha) I]^+`.
pub fn decoder_closed_form_padded(
    codes: &Matrix,
    data: &Matrix,
    prev_w: &Matrix,
    prev_b: &Vector,
    reg: DecoderReg,
) -> Result<(Matrix, Vector)> {
    check_shapes(codes, data, prev_w, prev_b)?;
    reg.validate()?;
    let (d, count) = codes.shape();
    let n = data.nrows();
    let (psi, phi, z_bar, x_bar) = centred_system(codes, data, prev_b, reg);
    let width = count + 2 + 2 * d;
    let mut lhs = Matrix::zeros(d, width);
    let mut rhs = Matrix::zeros(n, width);
    lhs.columns_mut(0, count + 2).copy_from(&psi);
    rhs.columns_mut(0, count + 2).copy_from(&phi);
    let sm = reg.mu.sqrt();
    let sa = reg.alpha.sqrt();
    for i in 0..d {
        lhs[(i, count + 2 + i)] = sm;
        lhs[(i, count + 2 + d + i)] = sa;
    }
    rhs.columns_mut(count + 2, d).copy_from(&(prev_w * sm));
    let w = rhs * pinv(&lhs, DEFAULT_REL_TOL)?;
    let b = bias_from(&w, &z_bar, &x_bar, prev_b, count, reg);
    Ok((w, b))
}

/// `W = (Phi Psi^T + mu W_t)(Psi Psi^T + (alpha + mu) I)^{-1}`, falling back
/// to a pseudoinverse when the Gram matrix is not positive definite.
pub fn decoder_closed_form_normal(
    codes: &Matrix,
    data: &Matrix,
    prev_w: &Matrix,
    prev_b: &Vector,
    reg: DecoderReg,
) -> Result<(Matrix, Vector)> {
    check_shapes(codes, data, prev_w, prev_b)?;
    reg.validate()?;
    let (d, count) = codes.shape();
    let (psi, phi, z_bar, x_bar) = centred_system(codes, data, prev_b, reg);
    let mut gram = &psi * psi.transpose();
    for i in 0..d {
        gram[(i, i)] += reg.alpha + reg.mu;
    }
    let cross = &phi * psi.transpose() + prev_w * reg.mu;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&cross.transpose()).transpose(),
        None => cross * pinv(&gram, DEFAULT_REL_TOL)?,
    };
    let b = bias_from(&w, &z_bar, &x_bar, prev_b, count, reg);
    Ok((w, b))
}

/// Value of the decoder subproblem objective.
pub fn decoder_objective(
    codes: &Matrix,
    data: &Matrix,
    w: &Matrix,
    b: &Vector,
    prev_w: &Matrix,
    prev_b: &Vector,
    reg: DecoderReg,
) -> f64 {
    let mut resid = w * codes - data;
    for mut col in resid.column_iter_mut() {
        col += b;
    }
    resid.norm_squared()
        + reg.mu * (w - prev_w).norm_squared()
        + reg.nu * (b - prev_b).norm_squared()
        + reg.alpha * w.norm_squared()
        + reg.beta * b.norm_squared()
}

/// Analytic gradient of [`decoder_objective`] in `(W, b)`.
pub fn decoder_gradient(
    codes: &Matrix,
    data: &Matrix,
    w: &Matrix,
    b: &Vector,
    prev_w: &Matrix,
    prev_b: &Vector,
    reg: DecoderReg,
) -> (Matrix, Vector) {
    let mut resid = w * codes - data;
    for mut col in resid.column_iter_mut() {
        col += b;
    }
    let gw = &resid * codes.transpose() * 2.0 + (w - prev_w) * (2.0 * reg.mu) + w * (2.0 * reg.alpha);
    let gb = resid.column_sum() * 2.0 + (b - prev_b) * (2.0 * reg.nu) + b * (2.0 * reg.beta);
    (gw, gb)
}
