//! Experiment recipes behind the command-line front end.
//!
//! Each command takes resolved [`Settings`] and an output directory, writes
//! its CSV, JSON and SVG files there together with a [`RunManifest`], and
//! returns a typed report. Re-running a command from the settings stored in
//! its manifest reproduces the CSV files byte for byte.

mod bridge;
mod cells;
pub mod config;
pub mod manifest;
pub mod plot;
mod train;

use std::path::Path;

pub use bridge::{cmd_bridge, BridgeReport, BridgeRow};
pub use cells::{cmd_geometry, DiagramSpec, GeometryReport};
pub use config::{ExperimentConfig, Method, Settings, SweepAxis};
pub use manifest::{load_settings, RunManifest, MANIFEST_FILE};
pub use train::{cmd_gen_data, cmd_sweep, cmd_train, SweepReport, SweepRow, TrainReport};

use crate::data::{gen_clusters2d, gen_synth_activations, load_mnist, split_and_subsample, Dataset, Provenance, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use config::DataSettings;

/// The dataset named by the `[data]` section, before splitting.
pub fn load_dataset(data: &DataSettings) -> Result<Dataset> {
    match data.dataset {
        Provenance::Mnist => {
            let (images, labels) = match (&data.mnist_images, &data.mnist_labels) {
                (Some(i), Some(l)) => (i, l),
                _ => return Err(Error::contract("mnist needs both image and label files")),
            };
            load_mnist(images, labels)
        }
        Provenance::Clusters2d => gen_clusters2d(data.n, data.seed),
        Provenance::SynthActs => gen_synth_activations(
            data.n,
            data.dim,
            data.dict_size,
            data.true_sparsity,
            data.noise,
            data.seed,
        ),
    }
}

/// Train/test split with the test part fixed before subsampling.
pub fn split_dataset(ds: &Dataset, data: &DataSettings) -> Result<(Dataset, Dataset)> {
    split_and_subsample(
        ds,
        &SplitSpec {
            train_fraction: data.train_fraction,
            subsample_fraction: data.subsample_fraction,
            seed: data.seed,
        },
    )
}

/// Human-readable dataset provenance for manifests.
pub fn describe_dataset(data: &DataSettings) -> String {
    match data.dataset {
        Provenance::Mnist => format!(
            "mnist images={} labels={}",
            data.mnist_images.as_deref().map(|p| p.display().to_string()).unwrap_or_default(),
            data.mnist_labels.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
        ),
        Provenance::Clusters2d => format!("clusters2d n={} seed={}", data.n, data.seed),
        Provenance::SynthActs => format!(
            "synth_acts n={} dim={} dict_size={} true_sparsity={} noise={} seed={}",
            data.n, data.dim, data.dict_size, data.true_sparsity, data.noise, data.seed
        ),
    }
}

/// Mean over samples of the squared reconstruction error, summed in sample order.
pub fn mean_sq_error(x: &Matrix, recon: &Matrix) -> f64 {
    let total: f64 = x
        .column_iter()
        .zip(recon.column_iter())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    total / x.ncols().max(1) as f64
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `contents` to `dir/name` and records `name` as an output.
fn write_output(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}
