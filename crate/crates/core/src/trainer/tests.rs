use super::*;
use crate::numerics::testutil::*;
use crate::sae::batch_loss;

fn small_cfg(act: Activation) -> TrainConfig {
    TrainConfig {
        d: 5,
        t_max: 5,
        eta: 0.01,
        batch: 8,
        sgd_steps: 3,
        activation: act,
        ..TrainConfig::default()
    }
}

fn untied(seed: u64, n: usize, d: usize) -> SaeParams {
    let mut r = rng(seed);
    SaeParams::new(
        gaussian(&mut r, d, n),
        gaussian_vec(&mut r, d) * 0.3,
        gaussian(&mut r, n, d),
        gaussian_vec(&mut r, n),
    )
    .unwrap()
}

fn perturbed(p: &SaeParams, seed: u64, eps: f64) -> SaeParams {
    let mut r = rng(seed);
    let mut q = p.clone();
    q.w_enc += gaussian(&mut r, p.d(), p.n()) * eps;
    q.b_enc += gaussian_vec(&mut r, p.d()) * eps;
    if let Some(w) = q.w_dec.as_mut() {
        *w += gaussian(&mut r, p.n(), p.d()) * eps;
    }
    q.b_dec += gaussian_vec(&mut r, p.n()) * eps;
    q
}

fn fd_check(params: &SaeParams, prev: &SaeParams, x: &Matrix, cfg: &TrainConfig) {
    let costs = cfg.cost_to_move.at(0);
    let g = objective_gradient(params, prev, x, 1.0, cfg, &costs).unwrap();
    let f = |p: &SaeParams| full_prox_loss(p, prev, x, cfg, 0).unwrap();
    let h = 1e-6;
    let check = |analytic: f64, plus: SaeParams, minus: SaeParams| {
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0);
        assert!(err < 1e-4, "analytic {analytic} vs finite difference {fd}");
    };
    for i in 0..params.w_enc.len() {
        let (mut a, mut b) = (params.clone(), params.clone());
        a.w_enc[i] += h;
        b.w_enc[i] -= h;
        check(g.w_enc[i], a, b);
    }
    for i in 0..params.b_enc.len() {
        let (mut a, mut b) = (params.clone(), params.clone());
        a.b_enc[i] += h;
        b.b_enc[i] -= h;
        check(g.b_enc[i], a, b);
    }
    for i in 0..params.n() * params.d() {
        let (mut a, mut b) = (params.clone(), params.clone());
        a.w_dec.as_mut().unwrap()[i] += h;
        b.w_dec.as_mut().unwrap()[i] -= h;
        check(g.w_dec[i], a, b);
    }
    for i in 0..params.b_dec.len() {
        let (mut a, mut b) = (params.clone(), params.clone());
        a.b_dec[i] += h;
        b.b_dec[i] -= h;
        check(g.b_dec[i], a, b);
    }
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let mut r = rng(100);
    let x = gaussian(&mut r, 3, 9);
    for act in [Activation::Relu, Activation::JumpRelu { tau: 0.2 }, Activation::TopK { k: 2 }] {
        let params = untied(101, 3, 5);
        let prev = perturbed(&params, 102, 0.3);
        let cfg = TrainConfig {
            cost_to_move: CostToMove::constant(0.7, 0.4, 1.1, 0.9),
            weight_decay: WeightDecay { alpha: 0.2, beta: 0.3, enc: 0.15 },
            penalty: SparsityPenalty::L1 { lambda: 0.25 },
            ..small_cfg(act)
        };
        fd_check(&params, &prev, &x, &cfg);
    }
}

#[test]
fn single_full_batch_step_follows_gradient() {
    let mut r = rng(103);
    let x = gaussian(&mut r, 3, 12);
    let params = untied(104, 3, 5);
    let cfg = TrainConfig {
        eta: 1e-7,
        batch: 12,
        sgd_steps: 1,
        ..small_cfg(Activation::Relu)
    };
    let costs = Costs::default();
    let (w, b) = encoder_sgd_step(&x, &params, &params, &cfg, &costs, &mut training_rng(0)).unwrap();
    let h = 1e-6;
    let f = |p: &SaeParams| full_prox_loss(p, &params, &x, &cfg, 0).unwrap();
    let eps = cfg.adam.eps;
    for i in 0..w.len() {
        let (mut a, mut m) = (params.clone(), params.clone());
        a.w_enc[i] += h;
        m.w_enc[i] -= h;
        let fd = (f(&a) - f(&m)) / (2.0 * h);
        let expected = -fd / (fd.abs() + eps);
        let step = (w[i] - params.w_enc[i]) / cfg.eta;
        assert!((step - expected).abs() < 1e-4, "entry {i}: {step} vs {expected}");
    }
    for i in 0..b.len() {
        let (mut a, mut m) = (params.clone(), params.clone());
        a.b_enc[i] += h;
        m.b_enc[i] -= h;
        let fd = (f(&a) - f(&m)) / (2.0 * h);
        let step = (b[i] - params.b_enc[i]) / cfg.eta;
        assert!((step + fd / (fd.abs() + eps)).abs() < 1e-4);
    }
}

#[test]
fn perfect_reconstruction_is_stationary() {
    let x = Matrix::from_row_slice(1, 4, &[0.5, 1.0, 2.0, 3.0]);
    let params = SaeParams::new(
        Matrix::from_element(1, 1, 1.0),
        Vector::zeros(1),
        Matrix::from_element(1, 1, 1.0),
        Vector::zeros(1),
    )
    .unwrap();
    let cfg = TrainConfig {
        d: 1,
        batch: 2,
        sgd_steps: 20,
        activation: Activation::Relu,
        ..small_cfg(Activation::Relu)
    };
    let (w, b) = encoder_sgd_step(&x, &params, &params, &cfg, &Costs::default(), &mut training_rng(1)).unwrap();
    assert!((w[(0, 0)] - 1.0).abs() <= 1e-6);
    assert!(b[0].abs() <= 1e-6);
}

#[test]
fn proximal_weight_shrinks_the_encoder_move() {
    let mut r = rng(105);
    let x = gaussian(&mut r, 3, 40);
    let params = untied(106, 3, 5);
    let moves: Vec<f64> = [1.0, 1e2, 1e4]
        .into_iter()
        .map(|mu| {
            let cfg = TrainConfig {
                batch: 40,
                sgd_steps: 300,
                eta: 0.01,
                ..small_cfg(Activation::Relu)
            };
            let costs = Costs { mu_enc: mu, nu_enc: mu, ..Costs::default() };
            let (w, b) = encoder_sgd_step(&x, &params, &params, &cfg, &costs, &mut training_rng(2)).unwrap();
            ((w - &params.w_enc).norm_squared() + (b - &params.b_enc).norm_squared()).sqrt()
        })
        .collect();
    assert!(moves[0] > moves[1] && moves[1] > moves[2], "{moves:?}");
}

#[test]
fn full_prox_loss_reductions() {
    let mut r = rng(107);
    let x = gaussian(&mut r, 3, 10);
    let p = untied(108, 3, 5);
    let q = perturbed(&p, 109, 0.5);
    let cfg = TrainConfig {
        cost_to_move: CostToMove::constant(0.3, 0.2, 0.5, 0.4),
        weight_decay: WeightDecay { alpha: 0.1, beta: 0.0, enc: 0.05 },
        penalty: SparsityPenalty::L1 { lambda: 0.1 },
        ..small_cfg(Activation::TopK { k: 2 })
    };
    let base = regularised_loss(&p, &x, &cfg).unwrap().total;
    assert_eq!(full_prox_loss(&p, &p, &x, &cfg, 0).unwrap(), base);

    let plain = TrainConfig { cost_to_move: CostToMove::default(), ..cfg.clone() };
    let bl = batch_loss(&x, &q, &cfg.activation, &cfg.penalty, AuxDecay { enc: 0.05, dec: 0.1 }).unwrap();
    assert_eq!(full_prox_loss(&q, &p, &x, &plain, 0).unwrap(), bl.total);

    let only_dec = |mu: f64| {
        let c = TrainConfig { cost_to_move: CostToMove::constant(0.0, 0.0, mu, 0.0), ..cfg.clone() };
        full_prox_loss(&q, &p, &x, &c, 0).unwrap() - regularised_loss(&q, &x, &c).unwrap().total
    };
    let (one, two) = (only_dec(0.5), only_dec(1.0));
    assert!(one > 0.0);
    assert!((two - 2.0 * one).abs() <= 1e-12 * two);
}

#[test]
fn zero_iterations_return_initial_params() {
    let mut r = rng(110);
    let x = gaussian(&mut r, 3, 20);
    let cfg = TrainConfig { t_max: 0, ..small_cfg(Activation::TopK { k: 2 }) };
    let (p, log) = pam_sgd_train(&x, &Matrix::zeros(3, 0), &cfg).unwrap();
    assert_eq!(p, initial_params(&x, &cfg, false).unwrap());
    assert!(log.records.is_empty());
}

#[test]
fn decoder_only_alternation_is_monotone() {
    for seed in 0..5 {
        let mut r = rng(200 + seed);
        let x = gaussian(&mut r, 3, 30);
        let cfg = TrainConfig {
            t_max: 1,
            freeze_encoder: true,
            cost_to_move: CostToMove::constant(0.0, 0.0, 0.5, 0.3),
            weight_decay: WeightDecay { alpha: 0.05, beta: 0.02, enc: 0.0 },
            ..small_cfg(Activation::TopK { k: 2 })
        };
        let mut theta = untied(300 + seed, 3, 5);
        let mut prev_loss = regularised_loss(&theta, &x, &cfg).unwrap().total;
        for _ in 0..50 {
            let (next, _) = pam_sgd_train_from(theta.clone(), &x, &Matrix::zeros(3, 0), &cfg).unwrap();
            let prox = full_prox_loss(&next, &theta, &x, &cfg, 0).unwrap();
            let loss = regularised_loss(&next, &x, &cfg).unwrap().total;
            assert!(prox <= prev_loss + 1e-9, "{prox} > {prev_loss}");
            assert!(loss <= prox + 1e-9);
            prev_loss = loss;
            theta = next;
        }
    }
}

#[test]
fn evaluate_examples() {
    let mut r = rng(111);
    let x = gaussian(&mut r, 4, 50);
    let p = untied(112, 4, 6);
    let act = Activation::TopK { k: 2 };
    let (mse, frac) = evaluate(&p, &act, &x).unwrap();
    assert!(frac <= 2.0 / 6.0);
    let mut se = 0.0;
    let mut active = 0;
    for c in x.column_iter() {
        let z = crate::sae::encode(&c.into_owned(), &p, &act).unwrap();
        active += z.iter().filter(|v| **v != 0.0).count();
        se += (crate::sae::decode(&z, &p).unwrap() - c).norm_squared();
    }
    assert!((mse - se / 50.0).abs() < 1e-10);
    assert!((frac - active as f64 / 300.0).abs() < 1e-15);

    let id = SaeParams::new(Matrix::identity(4, 4), Vector::zeros(4), Matrix::identity(4, 4), Vector::zeros(4)).unwrap();
    let pos = x.map(|v| v.abs() + 0.1);
    assert_eq!(evaluate(&id, &Activation::Relu, &pos).unwrap().0, 0.0);
    assert!(evaluate(&id, &Activation::Relu, &Matrix::zeros(4, 0)).is_err());
}

#[test]
fn runs_are_deterministic_and_mode_independent() {
    let mut r = rng(113);
    let x = gaussian(&mut r, 3, 600);
    let test = gaussian(&mut r, 3, 50);
    let cfg = TrainConfig { batch: 300, ..small_cfg(Activation::TopK { k: 2 }) };
    let (p1, l1) = pam_sgd_train(&x, &test, &cfg).unwrap();
    let (p2, l2) = pam_sgd_train(&x, &test, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(l1.to_csv(), l2.to_csv());
    let seq = TrainConfig { exec: Exec::Sequential, ..cfg.clone() };
    let (p3, l3) = pam_sgd_train(&x, &test, &seq).unwrap();
    assert_eq!(p1, p3);
    assert_eq!(l1, l3);

    let (s1, g1) = sgd_train(&x, &test, &cfg, true).unwrap();
    let (s2, g2) = sgd_train(&x, &test, &seq, true).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(g1, g2);
    assert_eq!(l1.records.len(), 5);
}

#[test]
fn zero_learning_rate_sgd_is_flat() {
    let mut r = rng(114);
    let x = gaussian(&mut r, 3, 30);
    let cfg = TrainConfig { eta: 0.0, ..small_cfg(Activation::Relu) };
    for tied in [false, true] {
        let (p, log) = sgd_train(&x, &x, &cfg, tied).unwrap();
        assert_eq!(p, initial_params(&x, &cfg, tied).unwrap());
        let first = log.records[0];
        assert!(log.records.iter().all(|rec| rec.train == first.train && rec.test_mse == first.test_mse));
    }
}

#[test]
fn tied_sgd_keeps_tied_params_and_learns() {
    let mut r = rng(115);
    let x = gaussian(&mut r, 4, 200);
    let cfg = TrainConfig { d: 8, t_max: 30, batch: 32, eta: 0.01, ..small_cfg(Activation::Relu) };
    let (p, log) = sgd_train(&x, &x, &cfg, true).unwrap();
    assert!(p.tied());
    let first = log.records[0].train.total;
    let last = log.last().unwrap().train.total;
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn tied_gradient_folds_decoder_block() {
    let mut r = rng(116);
    let x = gaussian(&mut r, 3, 10);
    let p = SaeParams::new_tied(gaussian(&mut r, 4, 3), gaussian_vec(&mut r, 4), gaussian_vec(&mut r, 3)).unwrap();
    let cfg = TrainConfig {
        d: 4,
        weight_decay: WeightDecay { alpha: 0.2, beta: 0.1, enc: 0.3 },
        ..small_cfg(Activation::Relu)
    };
    let costs = Costs::default();
    let g = objective_gradient(&p, &p, &x, 1.0, &cfg, &costs).unwrap();
    let total = &g.w_enc + g.w_dec.transpose();
    let h = 1e-6;
    for i in 0..p.w_enc.len() {
        let (mut a, mut b) = (p.clone(), p.clone());
        a.w_enc[i] += h;
        b.w_enc[i] -= h;
        let fd = (regularised_loss(&a, &x, &cfg).unwrap().total - regularised_loss(&b, &x, &cfg).unwrap().total)
            / (2.0 * h);
        assert!((fd - total[i]).abs() < 1e-4 * (1.0 + fd.abs()));
    }
}

#[test]
fn pam_improves_on_initial_reconstruction() {
    let mut r = rng(117);
    let x = gaussian(&mut r, 4, 120);
    let cfg = TrainConfig { d: 10, t_max: 20, batch: 32, ..small_cfg(Activation::TopK { k: 3 }) };
    let init = initial_params(&x, &cfg, false).unwrap();
    let before = evaluate(&init, &cfg.activation, &x).unwrap().0;
    let (p, log) = pam_sgd_train(&x, &x, &cfg).unwrap();
    let after = evaluate(&p, &cfg.activation, &x).unwrap().0;
    assert!(after < before);
    assert!(log.records.iter().all(|rec| rec.active_frac <= 0.3 + 1e-15));
}

#[test]
fn schedules_and_validation() {
    let mut cfg = small_cfg(Activation::Relu);
    cfg.cost_to_move.mu_dec = Schedule::PerIter(vec![0.0, 1.0, 2.0]);
    assert!(cfg.validate().is_err());
    cfg.t_max = 3;
    cfg.validate().unwrap();
    assert_eq!(cfg.cost_to_move.at(2).mu_dec, 2.0);
    cfg.cost_to_move.nu_enc = Schedule::Constant(-1.0);
    assert!(cfg.validate().is_err());
    let bad_batch = TrainConfig { batch: 0, ..small_cfg(Activation::Relu) };
    assert!(bad_batch.validate().is_err());
    let soft = small_cfg(Activation::SoftTopK { k: 2, temperature: 0.1 });
    let x = Matrix::zeros(3, 4);
    assert!(pam_sgd_train(&x, &x, &soft).is_err());
    assert!(pam_sgd_train(&Matrix::zeros(3, 0), &x, &small_cfg(Activation::Relu)).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let mut cfg = small_cfg(Activation::JumpRelu { tau: 0.1 });
    cfg.t_max = 2;
    cfg.cost_to_move.mu_enc = Schedule::PerIter(vec![0.5, 0.25]);
    cfg.init = Init::NearData { jitter: 0.01 };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: TrainConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn csv_layout() {
    let mut r = rng(118);
    let x = gaussian(&mut r, 3, 20);
    let cfg = TrainConfig { t_max: 4, ..small_cfg(Activation::Relu) };
    let (_, log) = pam_sgd_train(&x, &Matrix::zeros(3, 0), &cfg).unwrap();
    let csv = log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], RUNLOG_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,"));
    let fields: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(fields.len(), 8);
    assert_eq!(fields[5], "");
    assert_eq!(fields[7], "");
    let timed = TrainConfig { wall_time: true, ..cfg };
    let (_, log) = pam_sgd_train(&x, &x, &timed).unwrap();
    assert!(log.records.iter().all(|rec| rec.seconds.is_some() && rec.test_mse.is_some()));
}
