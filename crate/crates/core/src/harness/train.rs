use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{Method, Settings, SweepAxis};
use super::manifest::{unix_now, RunManifest};
use super::{create_dir, describe_dataset, load_dataset, plot, split_dataset, write_output};
use crate::data::Dataset;
use crate::error::Result;
use crate::par::Exec;
use crate::sae::SaeParams;
use crate::trainer::{pam_sgd_train, sgd_train, RunLog};

pub struct TrainReport {
    pub method: Method,
    pub params: SaeParams,
    pub log: RunLog,
    pub train_count: usize,
    pub test_count: usize,
    pub dir: PathBuf,
}

/// Trains one model with the `[train]` method and seed, writing `log.csv`,
/// `params.json`, `loss.svg` and the manifest into `out_dir`.
pub fn cmd_train(settings: &Settings, out_dir: &Path) -> Result<TrainReport> {
    let started = unix_now();
    let cfg = settings.resolve()?;
    let ds = load_dataset(&cfg.data)?;
    run_one(settings, &ds, out_dir, Exec::default(), started)
}

fn run_one(settings: &Settings, ds: &Dataset, dir: &Path, exec: Exec, started: u64) -> Result<TrainReport> {
    let cfg = settings.resolve()?;
    let (train, test) = split_dataset(ds, &cfg.data)?;
    let method = cfg.train.method;
    let seed = cfg.train.seed;
    let mut tc = cfg.train.config_for(method, train.len(), seed);
    tc.exec = exec;
    tc.validate()?;
    let (params, log) = match method {
        Method::Pam => pam_sgd_train(&train.samples, &test.samples, &tc)?,
        Method::Sgd => sgd_train(&train.samples, &test.samples, &tc, cfg.train.tied)?,
    };
    create_dir(dir)?;
    let mut manifest = RunManifest::new("train", settings, describe_dataset(&cfg.data), vec![seed], started);
    write_output(dir, "log.csv", &log.to_csv(), &mut manifest.outputs)?;
    write_output(dir, "params.json", &params.to_json()?, &mut manifest.outputs)?;
    let title = format!("{method} on {} (seed {seed})", cfg.data.dataset);
    write_output(dir, "loss.svg", &plot::loss_curves(&log, train.len(), &title), &mut manifest.outputs)?;
    manifest.write(dir)?;
    Ok(TrainReport {
        method,
        params,
        log,
        train_count: train.len(),
        test_count: test.len(),
        dir: dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub method: Method,
    pub seed: u64,
    pub test_mse: Option<f64>,
    pub active_frac: Option<f64>,
    /// Largest active fraction over every evaluation of the run.
    pub max_active_frac: Option<f64>,
    pub error: Option<String>,
    /// Run directory relative to the sweep directory.
    pub run_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "axis,value,method,seed,test_mse,active_frac,status";

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("error: {}", e.replace([',', '\n', '\r'], " ")),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.axis,
                r.value,
                r.method,
                r.seed,
                opt(r.test_mse),
                opt(r.active_frac),
                status
            ));
        }
        out
    }

    /// Rows for one axis value and method, in seed order.
    pub fn select(&self, value: &str, method: Method) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.value == value && r.method == method)
            .collect()
    }
}

struct Job {
    value: String,
    method: Method,
    seed: u64,
    settings: Settings,
    run_dir: String,
}

/// Runs both trainers for every axis value and seed on a pool of
/// `sweep.workers` threads. Every run gets its own directory and manifest;
/// `results.csv` is written once all runs have finished and has one row per
/// grid point, failed runs included.
pub fn cmd_sweep(settings: &Settings, out_dir: &Path) -> Result<SweepReport> {
    let started = unix_now();
    let cfg = with_first_value(settings)?.resolve()?;
    let sweep = &cfg.sweep;
    let axis = sweep.axis;
    let mut jobs = Vec::new();
    for value in &sweep.values {
        for method in Method::ALL {
            for &seed in &sweep.seeds {
                let mut s = settings.clone();
                for key in axis.keys() {
                    s.set(key, &axis.setting_value(value))?;
                }
                s.set("train.method", &method.to_string())?;
                s.set("train.seed", &seed.to_string())?;
                s.resolve()?;
                jobs.push(Job {
                    value: value.clone(),
                    method,
                    seed,
                    settings: s,
                    run_dir: format!("runs/{axis}={value}/{method}/seed{seed}"),
                });
            }
        }
    }
    let ds = load_dataset(&cfg.data)?;
    create_dir(out_dir)?;

    let workers = sweep.workers.min(jobs.len()).max(1);
    let exec = if workers > 1 { Exec::Sequential } else { Exec::default() };
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let row = run_job(job, &ds, out_dir, exec);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|r| r.expect("every job fills its slot"))
        .collect();

    let report = SweepReport {
        axis: axis.to_string(),
        rows,
    };
    let mut manifest = RunManifest::new("sweep", settings, describe_dataset(&cfg.data), sweep.seeds.clone(), started);
    write_output(out_dir, "results.csv", &report.to_csv(), &mut manifest.outputs)?;
    manifest.outputs.extend(report.rows.iter().map(|r| r.run_dir.clone()));
    manifest.write(out_dir)?;
    Ok(report)
}

/// The swept keys are overwritten by every run, so the base settings are
/// checked with the first axis value in place.
fn with_first_value(settings: &Settings) -> Result<Settings> {
    let mut base = settings.clone();
    let axis: SweepAxis = settings.get("sweep.axis")?;
    if let Some(first) = settings.raw("sweep.values").split(',').next() {
        for key in axis.keys() {
            base.set(key, &axis.setting_value(first.trim()))?;
        }
    }
    Ok(base)
}

fn run_job(job: &Job, ds: &Dataset, out_dir: &Path, exec: Exec) -> SweepRow {
    let dir = out_dir.join(&job.run_dir);
    let outcome = catch_unwind(AssertUnwindSafe(|| run_one(&job.settings, ds, &dir, exec, unix_now())));
    let mut row = SweepRow {
        value: job.value.clone(),
        method: job.method,
        seed: job.seed,
        test_mse: None,
        active_frac: None,
        max_active_frac: None,
        error: None,
        run_dir: job.run_dir.clone(),
    };
    match outcome {
        Ok(Ok(report)) => match report.log.last() {
            Some(last) => {
                row.test_mse = last.test_mse;
                row.active_frac = Some(last.active_frac);
                row.max_active_frac = report
                    .log
                    .records
                    .iter()
                    .map(|r| r.active_frac)
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            }
            None => row.error = Some("run recorded no iterations".into()),
        },
        Ok(Err(e)) => row.error = Some(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "run panicked".into());
            row.error = Some(msg);
        }
    }
    row
}

/// Writes the configured dataset's train and test splits as CSV.
pub fn cmd_gen_data(settings: &Settings, out_dir: &Path) -> Result<(Dataset, Dataset)> {
    let started = unix_now();
    let cfg = settings.resolve()?;
    let ds = load_dataset(&cfg.data)?;
    let (train, test) = split_dataset(&ds, &cfg.data)?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("gen-data", settings, describe_dataset(&cfg.data), vec![cfg.data.seed], started);
    write_output(out_dir, "train.csv", &train.to_csv(), &mut manifest.outputs)?;
    write_output(out_dir, "test.csv", &test.to_csv(), &mut manifest.outputs)?;
    manifest.write(out_dir)?;
    Ok((train, test))
}
