use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spline_sae::harness::{self, load_settings, Settings};

#[derive(Parser)]
#[command(name = "spline-sae", version, about = "Sparse autoencoder experiments: PAM-SGD, power-diagram geometry, k-means/PCA baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare a TopK SAE with k-means and local PCA on 2D clusters.
    Bridge(Common),
    /// Train one model with PAM-SGD or SGD.
    Train(Common),
    /// Run PAM-SGD and SGD over a grid of values along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// training_fraction, K, sgd_steps, weight_decay or cost_to_move.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values.
        #[arg(long)]
        values: Option<String>,
    },
    /// Render the cells of a params file or diagram spec.
    Geometry {
        #[command(flatten)]
        common: Common,
        /// SAE params JSON (2D input).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Diagram spec JSON with centroids, weights and order.
        #[arg(long)]
        diagram: Option<PathBuf>,
    },
    /// Write the configured dataset's train and test splits as CSV.
    GenData(Common),
}

#[derive(Args)]
struct Common {
    /// Config file or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    mnist_images: Option<PathBuf>,
    #[arg(long)]
    mnist_labels: Option<PathBuf>,
    /// Extra overrides as section.key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Defaults, then the config file, then flags.
    fn settings(&self, command: &str, seed_key: &str) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => load_settings(path, command)?,
            None => Settings::default(),
        };
        if let Some(seed) = self.seed {
            s.set(seed_key, &seed.to_string())?;
        }
        if let Some(w) = self.workers {
            s.set("sweep.workers", &w.to_string())?;
        }
        if let Some(p) = &self.mnist_images {
            s.set("data.mnist_images", &p.display().to_string())?;
        }
        if let Some(p) = &self.mnist_labels {
            s.set("data.mnist_labels", &p.display().to_string())?;
        }
        for pair in &self.overrides {
            s.set_pair(pair)?;
        }
        Ok(s)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Bridge(c) => {
            let s = c.settings("bridge", "bridge.seeds")?;
            let report = harness::cmd_bridge(&s, &c.out_dir).context("bridge failed")?;
            for r in &report.rows {
                println!(
                    "seed {}: kmeans {:.6}  sae {:.6}  kmeans+pca {:.6}  ordered {}",
                    r.seed,
                    r.kmeans_mse,
                    r.sae_mse,
                    r.pca_mse,
                    r.ordered()
                );
            }
            done(&c.out_dir);
        }
        Command::Train(c) => {
            let s = c.settings("train", "train.seed")?;
            let report = harness::cmd_train(&s, &c.out_dir).context("training failed")?;
            if let Some(last) = report.log.last() {
                let test = last.test_mse.map(|m| format!("{m:.6}")).unwrap_or_else(|| "n/a".into());
                println!(
                    "{} on {} train / {} test samples: {} iterations, train mse {:.6}, test mse {test}, active fraction {:.4}",
                    report.method,
                    report.train_count,
                    report.test_count,
                    last.iter,
                    last.train.reconstruction / report.train_count as f64,
                    last.active_frac
                );
            }
            done(&c.out_dir);
        }
        Command::Sweep { common, axis, values } => {
            let mut s = common.settings("sweep", "sweep.seeds")?;
            if let Some(a) = axis {
                s.set("sweep.axis", &a)?;
            }
            if let Some(v) = values {
                s.set("sweep.values", &v)?;
            }
            let report = harness::cmd_sweep(&s, &common.out_dir).context("sweep failed")?;
            print!("{}", report.to_csv());
            done(&common.out_dir);
        }
        Command::Geometry { common, params, diagram } => {
            let mut s = common.settings("geometry", "geometry.seed")?;
            if let Some(p) = params {
                s.set("geometry.params", &p.display().to_string())?;
            }
            if let Some(p) = diagram {
                s.set("geometry.diagram", &p.display().to_string())?;
            }
            let report = harness::cmd_geometry(&s, &common.out_dir).context("geometry failed")?;
            println!(
                "{} distinct cells at {}x{}; {}/{} re-validated pixels match",
                report.distinct_cells, report.resolution, report.resolution, report.matched_pixels, report.validated_pixels
            );
            done(&common.out_dir);
        }
        Command::GenData(c) => {
            let s = c.settings("gen-data", "data.seed")?;
            let (train, test) = harness::cmd_gen_data(&s, &c.out_dir).context("data generation failed")?;
            println!("{} train / {} test samples of dimension {}", train.len(), test.len(), train.dim());
            done(&c.out_dir);
        }
    }
    Ok(())
}

fn done(dir: &Path) {
    println!("outputs in {}", dir.display());
}
