//! PAM-SGD and plain SGD training of sparse autoencoders.
//!
//! One PAM-SGD outer iteration runs `sgd_steps` Adam steps on the encoder
//! subproblem (fresh optimizer state, a new random minibatch per step) and
//! then solves the decoder subproblem exactly on the whole training set.
//! One SGD outer iteration is an epoch: a shuffled pass in minibatches.

mod adam;
mod decoder;
mod grad;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::minibatch_indices;
use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Vector};
use crate::par::Exec;
use crate::sae::{batch_loss_with, encode_batch, sample_stats, Activation, AuxDecay, LossReport, SaeParams, SparsityPenalty};

pub use adam::{Adam, AdamConfig};
pub use decoder::{
    decoder_closed_form, decoder_closed_form_normal, decoder_closed_form_padded, decoder_gradient,
    decoder_objective, DecoderReg,
};
pub use grad::{data_gradient, Grads};

/// A constant or one value per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    PerIter(Vec<f64>),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant(0.0)
    }
}

impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PerIter(vs) => vs[t],
        }
    }

    fn validate(&self, name: &str, t_max: usize) -> Result<()> {
        let values: &[f64] = match self {
            Schedule::Constant(v) => std::slice::from_ref(v),
            Schedule::PerIter(vs) => {
                ensure!(
                    vs.len() == t_max,
                    "{name} schedule has {} entries, expected t_max = {t_max}",
                    vs.len()
                );
                vs
            }
        };
        ensure!(
            values.iter().all(|v| v.is_finite() && *v >= 0.0),
            "{name} must be finite and non-negative"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostToMove {
    pub mu_enc: Schedule,
    pub nu_enc: Schedule,
    pub mu_dec: Schedule,
    pub nu_dec: Schedule,
}

/// Cost-to-move coefficients in effect at one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Costs {
    pub mu_enc: f64,
    pub nu_enc: f64,
    pub mu_dec: f64,
    pub nu_dec: f64,
}

impl CostToMove {
    pub fn constant(mu_enc: f64, nu_enc: f64, mu_dec: f64, nu_dec: f64) -> Self {
        Self {
            mu_enc: Schedule::Constant(mu_enc),
            nu_enc: Schedule::Constant(nu_enc),
            mu_dec: Schedule::Constant(mu_dec),
            nu_dec: Schedule::Constant(nu_dec),
        }
    }

    pub fn at(&self, t: usize) -> Costs {
        Costs {
            mu_enc: self.mu_enc.at(t),
            nu_enc: self.nu_enc.at(t),
            mu_dec: self.mu_dec.at(t),
            nu_dec: self.nu_dec.at(t),
        }
    }
}

/// `alpha ||W_dec||^2 + beta ||b_dec||^2` on the decoder and
/// `enc ||W_enc||^2` on the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightDecay {
    pub alpha: f64,
    pub beta: f64,
    pub enc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Uniform { unit_norm_dec: bool },
    NearData { jitter: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Code dimension.
    pub d: usize,
    pub t_max: usize,
    pub eta: f64,
    pub batch: usize,
    pub sgd_steps: usize,
    pub cost_to_move: CostToMove,
    pub weight_decay: WeightDecay,
    pub adam: AdamConfig,
    pub seed: u64,
    pub activation: Activation,
    pub penalty: SparsityPenalty,
    pub init: Init,
    /// Keep the encoder at its initial value during PAM.
    pub freeze_encoder: bool,
    /// Add the cost-to-move terms to the plain SGD objective.
    pub prox_sgd: bool,
    /// Record wall-clock seconds in the run log.
    pub wall_time: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 256,
            t_max: 10,
            eta: 0.003,
            batch: 1024,
            sgd_steps: 1,
            cost_to_move: CostToMove::default(),
            weight_decay: WeightDecay::default(),
            adam: AdamConfig::default(),
            seed: 0,
            activation: Activation::TopK { k: 15 },
            penalty: SparsityPenalty::None,
            init: Init::Uniform { unit_norm_dec: false },
            freeze_encoder: false,
            prox_sgd: false,
            wall_time: false,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.d >= 1, "code dimension must be positive");
        ensure!(self.eta.is_finite() && self.eta >= 0.0, "learning rate must be finite and non-negative");
        ensure!(self.batch >= 1, "batch size must be at least 1");
        ensure!(self.sgd_steps >= 1, "sgd_steps must be at least 1");
        let wd = self.weight_decay;
        for (name, v) in [("alpha", wd.alpha), ("beta", wd.beta), ("encoder decay", wd.enc)] {
            ensure!(v.is_finite() && v >= 0.0, "{name} must be finite and non-negative");
        }
        let ctm = &self.cost_to_move;
        ctm.mu_enc.validate("mu_enc", self.t_max)?;
        ctm.nu_enc.validate("nu_enc", self.t_max)?;
        ctm.mu_dec.validate("mu_dec", self.t_max)?;
        ctm.nu_dec.validate("nu_dec", self.t_max)?;
        let a = self.adam;
        ensure!(
            (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0,
            "Adam needs beta1, beta2 in [0, 1) and eps > 0"
        );
        if let Init::NearData { jitter } = self.init {
            ensure!(jitter.is_finite() && jitter >= 0.0, "init jitter must be non-negative");
        }
        self.activation.validate(self.d)?;
        self.penalty.validate()?;
        Ok(())
    }

    fn aux(&self) -> AuxDecay {
        AuxDecay {
            enc: self.weight_decay.enc,
            dec: self.weight_decay.alpha,
        }
    }
}

/// Initial parameters drawn from the seed's initialisation stream.
pub fn initial_params(train: &Matrix, cfg: &TrainConfig, tied: bool) -> Result<SaeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.init {
        Init::Uniform { unit_norm_dec } => Ok(SaeParams::init_uniform(train.nrows(), cfg.d, tied, unit_norm_dec, &mut rng)),
        Init::NearData { jitter } => {
            ensure!(!tied, "near-data initialisation builds an untied decoder");
            SaeParams::init_near_data(train, cfg.d, jitter, &mut rng)
        }
    }
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub train: LossReport,
    pub test_mse: Option<f64>,
    pub active_frac: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<IterRecord>,
}

pub const RUNLOG_HEADER: &str = "iter,train_recon,train_sparsity,train_aux,train_total,test_mse,active_frac,seconds";

impl RunLog {
    /// Unrecorded values are left empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                r.train.reconstruction,
                r.train.sparsity,
                r.train.aux,
                r.train.total,
                opt(r.test_mse),
                r.active_frac,
                opt(r.seconds)
            );
        }
        out
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }
}

/// Mean per-sample squared error and mean fraction of nonzero code entries.
pub fn evaluate(params: &SaeParams, act: &Activation, data: &Matrix) -> Result<(f64, f64)> {
    evaluate_with(params, act, data, Exec::default())
}

pub fn evaluate_with(params: &SaeParams, act: &Activation, data: &Matrix, exec: Exec) -> Result<(f64, f64)> {
    ensure!(data.ncols() > 0, "evaluation needs at least one sample");
    let stats = sample_stats(params, act, data, exec)?;
    let count = stats.len() as f64;
    let errs: Vec<f64> = stats.iter().map(|s| s.sq_err).collect();
    let active: usize = stats.iter().map(|s| s.active).sum();
    Ok((
        crate::par::ordered_sum(&errs) / count,
        active as f64 / (count * params.d() as f64),
    ))
}

/// Training loss with every regulariser: reconstruction, sparsity,
/// `enc ||W_enc||^2 + alpha ||W_dec||^2 + beta ||b_dec||^2`.
pub fn regularised_loss(params: &SaeParams, data: &Matrix, cfg: &TrainConfig) -> Result<LossReport> {
    let base = batch_loss_with(data, params, &cfg.activation, &cfg.penalty, cfg.aux(), cfg.exec)?;
    let bias = cfg.weight_decay.beta * params.b_dec().norm_squared();
    Ok(LossReport::new(base.reconstruction, base.sparsity, base.aux + bias))
}

fn proximal_terms(theta: &SaeParams, prev: &SaeParams, c: &Costs) -> f64 {
    c.mu_enc * (theta.w_enc() - prev.w_enc()).norm_squared()
        + c.nu_enc * (theta.b_enc() - prev.b_enc()).norm_squared()
        + c.mu_dec * (theta.w_dec().as_ref() - prev.w_dec().as_ref()).norm_squared()
        + c.nu_dec * (theta.b_dec() - prev.b_dec()).norm_squared()
}

/// The regularised loss plus the four cost-to-move terms at iteration `t`.
pub fn full_prox_loss(theta: &SaeParams, prev: &SaeParams, data: &Matrix, cfg: &TrainConfig, t: usize) -> Result<f64> {
    ensure!(
        theta.n() == prev.n() && theta.d() == prev.d(),
        "parameter shapes differ between iterates"
    );
    let costs = cfg.cost_to_move.at(t);
    Ok(regularised_loss(theta, data, cfg)?.total + proximal_terms(theta, prev, &costs))
}

fn record(
    iter: usize,
    params: &SaeParams,
    train: &Matrix,
    test: &Matrix,
    cfg: &TrainConfig,
    start: &Instant,
) -> Result<IterRecord> {
    let train_loss = regularised_loss(params, train, cfg)?;
    let (test_mse, active_frac) = if test.ncols() > 0 {
        let (mse, frac) = evaluate_with(params, &cfg.activation, test, cfg.exec)?;
        (Some(mse), frac)
    } else {
        (None, evaluate_with(params, &cfg.activation, train, cfg.exec)?.1)
    };
    Ok(IterRecord {
        iter,
        train: train_loss,
        test_mse,
        active_frac,
        seconds: cfg.wall_time.then(|| start.elapsed().as_secs_f64()),
    })
}

fn check_inputs(train: &Matrix, test: &Matrix, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    ensure!(train.ncols() > 0, "training set is empty");
    ensure!(
        test.ncols() == 0 || test.nrows() == train.nrows(),
        "test samples have dim {}, training samples {}",
        test.nrows(),
        train.nrows()
    );
    ensure!(
        !matches!(cfg.activation, Activation::SoftTopK { .. }),
        "soft TopK cannot be trained directly; use TopK"
    );
    Ok(())
}

/// Gradient of the minibatch estimate of [`full_prox_loss`] in all four
/// blocks, treating the decoder weight as a free matrix. For tied
/// parameters the caller folds the decoder block into the encoder.
pub fn objective_gradient(
    params: &SaeParams,
    prev: &SaeParams,
    x: &Matrix,
    scale: f64,
    cfg: &TrainConfig,
    costs: &Costs,
) -> Result<Grads> {
    let wd = cfg.weight_decay;
    let mut g = data_gradient(params, &cfg.activation, &cfg.penalty, x, scale, cfg.exec)?;
    let w_dec = params.w_dec();
    g.w_enc += params.w_enc() * (2.0 * wd.enc) + (params.w_enc() - prev.w_enc()) * (2.0 * costs.mu_enc);
    g.b_enc += (params.b_enc() - prev.b_enc()) * (2.0 * costs.nu_enc);
    g.w_dec += w_dec.as_ref() * (2.0 * wd.alpha) + (w_dec.as_ref() - prev.w_dec().as_ref()) * (2.0 * costs.mu_dec);
    g.b_dec += params.b_dec() * (2.0 * wd.beta) + (params.b_dec() - prev.b_dec()) * (2.0 * costs.nu_dec);
    Ok(g)
}

/// `M` Adam steps on the encoder subproblem with the decoder of `params`
/// held fixed. Each step draws a fresh minibatch; its data term is rescaled
/// by `N / B` to estimate the full-sample sum.
pub fn encoder_sgd_step(
    train: &Matrix,
    params: &SaeParams,
    prev: &SaeParams,
    cfg: &TrainConfig,
    costs: &Costs,
    rng: &mut ChaCha8Rng,
) -> Result<(Matrix, Vector)> {
    ensure!(!params.tied(), "encoder steps need an untied decoder");
    let count = train.ncols();
    let mut work = params.clone();
    let mut adam_w = Adam::new(work.w_enc.len(), cfg.adam);
    let mut adam_b = Adam::new(work.b_enc.len(), cfg.adam);
    for _ in 0..cfg.sgd_steps {
        let idx = minibatch_indices(rng, count, cfg.batch);
        let x = train.select_columns(idx.iter());
        let scale = count as f64 / idx.len() as f64;
        let g = objective_gradient(&work, prev, &x, scale, cfg, costs)?;
        adam_w.step(cfg.eta, work.w_enc.as_mut_slice(), g.w_enc.as_slice());
        adam_b.step(cfg.eta, work.b_enc.as_mut_slice(), g.b_enc.as_slice());
    }
    Ok((work.w_enc, work.b_enc))
}

pub fn pam_sgd_train(train: &Matrix, test: &Matrix, cfg: &TrainConfig) -> Result<(SaeParams, RunLog)> {
    check_inputs(train, test, cfg)?;
    let init = initial_params(train, cfg, false)?;
    pam_sgd_train_from(init, train, test, cfg)
}

pub fn pam_sgd_train_from(
    mut params: SaeParams,
    train: &Matrix,
    test: &Matrix,
    cfg: &TrainConfig,
) -> Result<(SaeParams, RunLog)> {
    check_inputs(train, test, cfg)?;
    ensure!(!params.tied(), "PAM-SGD solves an untied decoder");
    ensure!(params.n() == train.nrows(), "model expects dim {}, data has {}", params.n(), train.nrows());
    ensure!(params.d() == cfg.d, "model has d = {}, config says {}", params.d(), cfg.d);
    let start = Instant::now();
    let mut rng = training_rng(cfg.seed);
    let mut log = RunLog::default();
    for t in 0..cfg.t_max {
        let costs = cfg.cost_to_move.at(t);
        let prev = params.clone();
        if !cfg.freeze_encoder {
            let (w, b) = encoder_sgd_step(train, &params, &prev, cfg, &costs, &mut rng)?;
            params.set_encoder(w, b)?;
        }
        let codes = encode_batch(&params, &cfg.activation, train)?;
        let reg = DecoderReg {
            mu: costs.mu_dec,
            nu: costs.nu_dec,
            alpha: cfg.weight_decay.alpha,
            beta: cfg.weight_decay.beta,
        };
        let (w, b) = decoder_closed_form(&codes, train, prev.w_dec().as_ref(), prev.b_dec(), reg)?;
        params.set_decoder(w, b)?;
        log.records.push(record(t + 1, &params, train, test, cfg, &start)?);
    }
    Ok((params, log))
}

pub fn sgd_train(train: &Matrix, test: &Matrix, cfg: &TrainConfig, tied: bool) -> Result<(SaeParams, RunLog)> {
    check_inputs(train, test, cfg)?;
    let init = initial_params(train, cfg, tied)?;
    sgd_train_from(init, train, test, cfg)
}

/// Adam on all parameter blocks jointly, one shuffled epoch per outer
/// iteration. Optimizer state persists across epochs.
pub fn sgd_train_from(
    mut params: SaeParams,
    train: &Matrix,
    test: &Matrix,
    cfg: &TrainConfig,
) -> Result<(SaeParams, RunLog)> {
    check_inputs(train, test, cfg)?;
    ensure!(params.n() == train.nrows(), "model expects dim {}, data has {}", params.n(), train.nrows());
    ensure!(params.d() == cfg.d, "model has d = {}, config says {}", params.d(), cfg.d);
    let start = Instant::now();
    let tied = params.tied();
    let count = train.ncols();
    let mut rng = training_rng(cfg.seed);
    let mut adam_we = Adam::new(params.w_enc.len(), cfg.adam);
    let mut adam_be = Adam::new(params.b_enc.len(), cfg.adam);
    let mut adam_wd = Adam::new(params.w_enc.len(), cfg.adam);
    let mut adam_bd = Adam::new(params.b_dec.len(), cfg.adam);
    let mut order: Vec<usize> = (0..count).collect();
    let mut log = RunLog::default();
    for t in 0..cfg.t_max {
        let costs = if cfg.prox_sgd { cfg.cost_to_move.at(t) } else { Costs::default() };
        let prev = params.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let x = train.select_columns(chunk.iter());
            let scale = count as f64 / chunk.len() as f64;
            let g = objective_gradient(&params, &prev, &x, scale, cfg, &costs)?;
            let mut g_we = g.w_enc;
            if tied {
                g_we += g.w_dec.transpose();
            } else {
                let w = params.w_dec.as_mut().expect("untied decoder");
                adam_wd.step(cfg.eta, w.as_mut_slice(), g.w_dec.as_slice());
            }
            adam_we.step(cfg.eta, params.w_enc.as_mut_slice(), g_we.as_slice());
            adam_be.step(cfg.eta, params.b_enc.as_mut_slice(), g.b_enc.as_slice());
            adam_bd.step(cfg.eta, params.b_dec.as_mut_slice(), g.b_dec.as_slice());
        }
        log.records.push(record(t + 1, &params, train, test, cfg, &start)?);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests;
