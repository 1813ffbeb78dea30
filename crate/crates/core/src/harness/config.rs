//! Flat `key = value` configuration with `[section]` headers.
//!
//! Every key has a built-in default. A config file overrides defaults and
//! command-line overrides win over both. Values stay as strings until a
//! typed view is built, which is what manifests store and replay.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::baselines::RankRule;
use crate::data::Provenance;
use crate::error::{Error, Result};
use crate::sae::{Activation, SparsityPenalty};
use crate::trainer::{AdamConfig, CostToMove, Init, Schedule, TrainConfig, WeightDecay};

/// Keys and their defaults. A key's section is the part before the dot.
const SCHEMA: &[(&str, &str)] = &[
    ("data.dataset", "clusters2d"),
    ("data.mnist_images", ""),
    ("data.mnist_labels", ""),
    ("data.n", "100"),
    ("data.dim", "128"),
    ("data.dict_size", "512"),
    ("data.true_sparsity", "8"),
    ("data.noise", "0.01"),
    ("data.train_fraction", "0.9"),
    ("data.subsample_fraction", "1"),
    ("data.seed", "0"),
    ("model.d", "256"),
    ("model.activation", "topk:15"),
    ("model.penalty", "none"),
    ("model.init", "uniform"),
    ("model.jitter", "0.05"),
    ("model.unit_norm_dec", "false"),
    ("train.method", "pam"),
    ("train.epochs", "10"),
    ("train.t_max", "auto"),
    ("train.eta", "0.003"),
    ("train.pam_batch", "1024"),
    ("train.sgd_batch", "128"),
    ("train.sgd_steps", "1"),
    ("train.tied", "true"),
    ("train.prox_sgd", "false"),
    ("train.mu_enc", "0"),
    ("train.nu_enc", "0"),
    ("train.mu_dec", "0"),
    ("train.nu_dec", "0"),
    ("train.alpha", "0"),
    ("train.beta", "0"),
    ("train.enc_decay", "0"),
    ("train.adam_beta1", "0.9"),
    ("train.adam_beta2", "0.999"),
    ("train.adam_eps", "1e-8"),
    ("train.seed", "0"),
    ("train.wall_time", "false"),
    ("sweep.axis", "training_fraction"),
    ("sweep.values", "0.01,0.05"),
    ("sweep.seeds", "0,1,2"),
    ("sweep.workers", "1"),
    ("bridge.points", "100"),
    ("bridge.d", "80"),
    ("bridge.k", "3"),
    ("bridge.steps", "5000"),
    ("bridge.eta", "0.008"),
    ("bridge.jitter", "0.05"),
    ("bridge.clusters", "3"),
    ("bridge.pca_rank", "1"),
    ("bridge.kmeans_iters", "300"),
    ("bridge.seeds", "0,1,2"),
    ("bridge.resolution", "160"),
    ("geometry.params", ""),
    ("geometry.diagram", ""),
    ("geometry.k", "0"),
    ("geometry.bbox", "auto"),
    ("geometry.resolution", "400"),
    ("geometry.overlay", "false"),
    ("geometry.zeta", "false"),
    ("geometry.validate_fraction", "0.01"),
    ("geometry.seed", "0"),
];

fn known_section(name: &str) -> bool {
    SCHEMA.iter().any(|(k, _)| k.split('.').next() == Some(name))
}

fn known_key(key: &str) -> bool {
    SCHEMA.iter().any(|(k, _)| *k == key)
}

/// Where a value came from. Line 0 marks defaults and command-line values.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

impl Default for Settings {
    fn default() -> Self {
        let entries = SCHEMA
            .iter()
            .map(|(k, v)| (k.to_string(), Entry { value: v.to_string(), line: 0 }))
            .collect();
        Self { entries }
    }
}

fn config_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

impl Settings {
    /// Defaults overlaid with a config file's entries.
    pub fn from_file_text(text: &str) -> Result<Self> {
        let mut out = Self::default();
        out.apply_text(text)?;
        Ok(out)
    }

    /// Defaults overlaid with a resolved key/value map, as stored in a manifest.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut out = Self::default();
        for (k, v) in map {
            out.set(k, v)?;
        }
        Ok(out)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        let mut seen = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, content, "unterminated section header"))?
                    .trim();
                if !known_section(name) {
                    return Err(config_err(line, name, "unknown section"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
            let k = k.trim();
            let sec = section
                .as_deref()
                .ok_or_else(|| config_err(line, k, "key appears before any [section] header"))?;
            let full = format!("{sec}.{k}");
            if !known_key(&full) {
                return Err(config_err(line, &full, "unknown key"));
            }
            if let Some(prev) = seen.insert(full.clone(), line) {
                return Err(config_err(line, &full, format!("duplicate key, first set on line {prev}")));
            }
            self.entries.insert(
                full,
                Entry {
                    value: v.trim().to_string(),
                    line,
                },
            );
        }
        Ok(())
    }

    /// Sets one value, as a command-line override does.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known_key(key) {
            return Err(config_err(0, key, "unknown key"));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    /// Parses `section.key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_err(0, pair, "override must look like `section.key=value`"))?;
        self.set(k.trim(), v)
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.entry(key).value
    }

    fn entry(&self, key: &str) -> &Entry {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a configuration key"))
    }

    fn error(&self, key: &str, message: impl Into<String>) -> Error {
        config_err(self.entry(key).line, key, message)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>()
            .map_err(|e| self.error(key, format!("cannot parse `{raw}`: {e}")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Err(self.error(key, "list is empty"));
        }
        raw.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>()
                    .map_err(|e| self.error(key, format!("cannot parse list item `{item}`: {e}")))
            })
            .collect()
    }

    fn get_path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    fn get_schedule(&self, key: &str) -> Result<Schedule> {
        let values: Vec<f64> = self.get_list(key)?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(self.error(key, "cost-to-move values must be finite and non-negative"));
        }
        Ok(match values.as_slice() {
            [v] => Schedule::Constant(*v),
            _ => Schedule::PerIter(values),
        })
    }

    fn positive(&self, key: &str) -> Result<usize> {
        let v: usize = self.get(key)?;
        if v == 0 {
            return Err(self.error(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn fraction(&self, key: &str) -> Result<f64> {
        let f: f64 = self.get(key)?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(self.error(key, format!("fraction must lie in (0, 1], got {f}")));
        }
        Ok(f)
    }

    fn non_negative(&self, key: &str) -> Result<f64> {
        let v: f64 = self.get(key)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(self.error(key, format!("must be finite and non-negative, got {v}")));
        }
        Ok(v)
    }

    /// The full resolved configuration.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }

    /// Config-file text that reproduces these settings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (k, e) in &self.entries {
            let (sec, key) = k.split_once('.').expect("keys are sectioned");
            if sec != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                current = sec;
            }
            out.push_str(&format!("{key} = {}\n", e.value));
        }
        out
    }

    /// Typed view of every section, validating all values.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let data = DataSettings::from_settings(self)?;
        let train = TrainSettings::from_settings(self)?;
        let sweep = SweepSettings::from_settings(self, &train)?;
        let bridge = BridgeSettings::from_settings(self)?;
        let geometry = GeometrySettings::from_settings(self)?;
        Ok(ExperimentConfig {
            data,
            train,
            sweep,
            bridge,
            geometry,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSettings,
    pub train: TrainSettings,
    pub sweep: SweepSettings,
    pub bridge: BridgeSettings,
    pub geometry: GeometrySettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub dataset: Provenance,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub n: usize,
    pub dim: usize,
    pub dict_size: usize,
    pub true_sparsity: usize,
    pub noise: f64,
    pub train_fraction: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl DataSettings {
    fn from_settings(s: &Settings) -> Result<Self> {
        let out = Self {
            dataset: s.get("data.dataset")?,
            mnist_images: s.get_path("data.mnist_images"),
            mnist_labels: s.get_path("data.mnist_labels"),
            n: s.positive("data.n")?,
            dim: s.positive("data.dim")?,
            dict_size: s.positive("data.dict_size")?,
            true_sparsity: s.positive("data.true_sparsity")?,
            noise: s.non_negative("data.noise")?,
            train_fraction: s.fraction("data.train_fraction")?,
            subsample_fraction: s.fraction("data.subsample_fraction")?,
            seed: s.get("data.seed")?,
        };
        if out.true_sparsity > out.dict_size {
            return Err(s.error("data.true_sparsity", "cannot exceed data.dict_size"));
        }
        if out.dataset == Provenance::Mnist {
            for key in ["data.mnist_images", "data.mnist_labels"] {
                if s.raw(key).is_empty() {
                    return Err(s.error(key, "the mnist dataset needs this path"));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pam,
    Sgd,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Pam, Method::Sgd];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pam => "pam",
            Method::Sgd => "sgd",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pam" => Ok(Method::Pam),
            "sgd" => Ok(Method::Sgd),
            _ => Err("expected `pam` or `sgd`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub method: Method,
    pub epochs: usize,
    /// Explicit outer iteration count; derived from `epochs` when absent.
    pub t_max: Option<usize>,
    pub pam_batch: usize,
    pub sgd_batch: usize,
    pub tied: bool,
    pub seed: u64,
    /// Hyperparameters shared by both trainers. `t_max`, `batch` and `seed`
    /// are filled in per run.
    pub base: TrainConfig,
}

impl TrainSettings {
    fn from_settings(s: &Settings) -> Result<Self> {
        let d = s.positive("model.d")?;
        let activation: Activation = s.get("model.activation")?;
        if let Err(e) = activation.validate(d) {
            return Err(s.error("model.activation", e.to_string()));
        }
        let init = match s.raw("model.init") {
            "uniform" => Init::Uniform {
                unit_norm_dec: s.get("model.unit_norm_dec")?,
            },
            "near_data" => Init::NearData {
                jitter: s.non_negative("model.jitter")?,
            },
            other => return Err(s.error("model.init", format!("expected `uniform` or `near_data`, got `{other}`"))),
        };
        let t_max = match s.raw("train.t_max") {
            "auto" => None,
            _ => Some(s.get("train.t_max")?),
        };
        let base = TrainConfig {
            d,
            t_max: 0,
            eta: s.non_negative("train.eta")?,
            batch: 1,
            sgd_steps: s.positive("train.sgd_steps")?,
            cost_to_move: CostToMove {
                mu_enc: s.get_schedule("train.mu_enc")?,
                nu_enc: s.get_schedule("train.nu_enc")?,
                mu_dec: s.get_schedule("train.mu_dec")?,
                nu_dec: s.get_schedule("train.nu_dec")?,
            },
            weight_decay: WeightDecay {
                alpha: s.non_negative("train.alpha")?,
                beta: s.non_negative("train.beta")?,
                enc: s.non_negative("train.enc_decay")?,
            },
            adam: AdamConfig {
                beta1: s.get("train.adam_beta1")?,
                beta2: s.get("train.adam_beta2")?,
                eps: s.get("train.adam_eps")?,
            },
            seed: 0,
            activation,
            penalty: s.get::<SparsityPenalty>("model.penalty")?,
            init,
            freeze_encoder: false,
            prox_sgd: s.get("train.prox_sgd")?,
            wall_time: s.get("train.wall_time")?,
            exec: Default::default(),
        };
        Ok(Self {
            method: s.get("train.method")?,
            epochs: s.get("train.epochs")?,
            t_max,
            pam_batch: s.positive("train.pam_batch")?,
            sgd_batch: s.positive("train.sgd_batch")?,
            tied: s.get("train.tied")?,
            seed: s.get("train.seed")?,
            base,
        })
    }

    /// Outer iterations for a training set of `count` samples: an epoch is
    /// `ceil(count / pam_batch)` PAM iterations or one SGD iteration.
    pub fn t_max_for(&self, method: Method, count: usize) -> usize {
        self.t_max.unwrap_or(match method {
            Method::Pam => self.epochs * count.div_ceil(self.pam_batch),
            Method::Sgd => self.epochs,
        })
    }

    pub fn config_for(&self, method: Method, count: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            t_max: self.t_max_for(method, count),
            batch: match method {
                Method::Pam => self.pam_batch,
                Method::Sgd => self.sgd_batch,
            },
            seed,
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    TrainingFraction,
    K,
    SgdSteps,
    WeightDecay,
    CostToMove,
}

impl SweepAxis {
    /// The settings a sweep value overrides.
    pub fn keys(&self) -> &'static [&'static str] {
        match self {
            SweepAxis::TrainingFraction => &["data.subsample_fraction"],
            SweepAxis::K => &["model.activation"],
            SweepAxis::SgdSteps => &["train.sgd_steps"],
            SweepAxis::WeightDecay => &["train.alpha", "train.beta"],
            SweepAxis::CostToMove => &["train.mu_enc", "train.nu_enc", "train.mu_dec", "train.nu_dec"],
        }
    }

    /// Settings value for one sweep point.
    pub fn setting_value(&self, value: &str) -> String {
        match self {
            SweepAxis::K => format!("topk:{value}"),
            _ => value.to_string(),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::TrainingFraction => "training_fraction",
            SweepAxis::K => "K",
            SweepAxis::SgdSteps => "sgd_steps",
            SweepAxis::WeightDecay => "weight_decay",
            SweepAxis::CostToMove => "cost_to_move",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "training_fraction" => SweepAxis::TrainingFraction,
            "K" | "k" => SweepAxis::K,
            "sgd_steps" => SweepAxis::SgdSteps,
            "weight_decay" => SweepAxis::WeightDecay,
            "cost_to_move" => SweepAxis::CostToMove,
            _ => return Err("expected training_fraction, K, sgd_steps, weight_decay or cost_to_move".into()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub axis: SweepAxis,
    /// Values as written, one run group each.
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

impl SweepSettings {
    fn from_settings(s: &Settings, train: &TrainSettings) -> Result<Self> {
        let axis: SweepAxis = s.get("sweep.axis")?;
        let values: Vec<String> = s.get_list("sweep.values")?;
        let seeds: Vec<u64> = s.get_list("sweep.seeds")?;
        for v in &values {
            let bad = |msg: String| Err(s.error("sweep.values", msg));
            match axis {
                SweepAxis::TrainingFraction => match v.parse::<f64>() {
                    Ok(f) if f > 0.0 && f <= 1.0 => {}
                    _ => return bad(format!("training fraction `{v}` must lie in (0, 1]")),
                },
                SweepAxis::K => match v.parse::<usize>() {
                    Ok(k) if k >= 1 && k <= train.base.d => {}
                    _ => return bad(format!("K = `{v}` must be an integer in [1, d = {}]", train.base.d)),
                },
                SweepAxis::SgdSteps => match v.parse::<usize>() {
                    Ok(m) if m >= 1 => {}
                    _ => return bad(format!("sgd_steps `{v}` must be a positive integer")),
                },
                SweepAxis::WeightDecay | SweepAxis::CostToMove => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() && x >= 0.0 => {}
                    _ => return bad(format!("`{v}` must be finite and non-negative")),
                },
            }
        }
        Ok(Self {
            axis,
            values,
            seeds,
            workers: s.positive("sweep.workers")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSettings {
    pub points: usize,
    pub d: usize,
    pub k: usize,
    pub steps: usize,
    pub eta: f64,
    pub jitter: f64,
    pub clusters: usize,
    pub pca_rank: RankRule,
    pub kmeans_iters: usize,
    pub seeds: Vec<u64>,
    pub resolution: usize,
}

impl BridgeSettings {
    fn from_settings(s: &Settings) -> Result<Self> {
        let d = s.positive("bridge.d")?;
        let k = s.positive("bridge.k")?;
        if k > d {
            return Err(s.error("bridge.k", format!("TopK order {k} exceeds d = {d}")));
        }
        let rank: usize = s.get("bridge.pca_rank")?;
        if rank > 2 {
            return Err(s.error("bridge.pca_rank", "rank cannot exceed the plane's dimension 2"));
        }
        Ok(Self {
            points: s.positive("bridge.points")?,
            d,
            k,
            steps: s.get("bridge.steps")?,
            eta: s.non_negative("bridge.eta")?,
            jitter: s.non_negative("bridge.jitter")?,
            clusters: s.positive("bridge.clusters")?,
            pca_rank: RankRule::Fixed { k: rank },
            kmeans_iters: s.positive("bridge.kmeans_iters")?,
            seeds: s.get_list("bridge.seeds")?,
            resolution: s.positive("bridge.resolution")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BBoxSpec {
    Auto,
    Fixed([f64; 4]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySettings {
    pub params: Option<PathBuf>,
    pub diagram: Option<PathBuf>,
    /// TopK order for a params file; 0 takes it from `model.activation`.
    pub k: usize,
    pub bbox: BBoxSpec,
    pub resolution: usize,
    pub overlay: bool,
    pub zeta: bool,
    pub validate_fraction: f64,
    pub seed: u64,
}

impl GeometrySettings {
    fn from_settings(s: &Settings) -> Result<Self> {
        let bbox = match s.raw("geometry.bbox") {
            "auto" => BBoxSpec::Auto,
            _ => {
                let v: Vec<f64> = s.get_list("geometry.bbox")?;
                let arr: [f64; 4] = v
                    .try_into()
                    .map_err(|_| s.error("geometry.bbox", "expected `auto` or `xmin,xmax,ymin,ymax`"))?;
                if !(arr[0] < arr[1] && arr[2] < arr[3]) {
                    return Err(s.error("geometry.bbox", "box must have positive extent"));
                }
                BBoxSpec::Fixed(arr)
            }
        };
        let validate_fraction: f64 = s.get("geometry.validate_fraction")?;
        if !(0.0..=1.0).contains(&validate_fraction) {
            return Err(s.error("geometry.validate_fraction", "must lie in [0, 1]"));
        }
        Ok(Self {
            params: s.get_path("geometry.params"),
            diagram: s.get_path("geometry.diagram"),
            k: s.get("geometry.k")?,
            bbox,
            resolution: s.positive("geometry.resolution")?,
            overlay: s.get("geometry.overlay")?,
            zeta: s.get("geometry.zeta")?,
            validate_fraction,
            seed: s.get("geometry.seed")?,
        })
    }
}
