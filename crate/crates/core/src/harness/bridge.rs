use std::path::Path;

use super::config::{BridgeSettings, Settings};
use super::manifest::{unix_now, RunManifest};
use super::{create_dir, mean_sq_error, write_output};
use crate::baselines::{kmeans_fit, local_pca_fit, KMeansModel, PiecewiseAffineAE};
use crate::data::gen_clusters2d;
use crate::error::Result;
use crate::geometry::{enc_to_diagram, render_cells, BBox, CellGrid, KthOrderPowerDiagram};
use crate::numerics::{Matrix, Vector};
use crate::sae::{decode_batch, encode_batch, Activation, SaeParams};
use crate::svg::SvgDoc;
use crate::trainer::{sgd_train, Init, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeRow {
    pub seed: u64,
    pub kmeans_mse: f64,
    pub sae_mse: f64,
    pub pca_mse: f64,
}

impl BridgeRow {
    /// k-means above the SAE above the local PCA extension.
    pub fn ordered(&self) -> bool {
        self.kmeans_mse > self.sae_mse && self.sae_mse > self.pca_mse
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeReport {
    pub rows: Vec<BridgeRow>,
}

pub const BRIDGE_HEADER: &str = "seed,kmeans_mse,sae_mse,kmeans_pca_mse,ordered";

impl BridgeReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{BRIDGE_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.seed,
                r.kmeans_mse,
                r.sae_mse,
                r.pca_mse,
                r.ordered()
            ));
        }
        out
    }
}

struct SeedFit {
    row: BridgeRow,
    data: Matrix,
    kmeans: KMeansModel,
    km_recon: Matrix,
    pca_recon: Matrix,
    sae: SaeParams,
    sae_recon: Matrix,
}

fn fit_seed(b: &BridgeSettings, seed: u64) -> Result<SeedFit> {
    let data = gen_clusters2d(b.points, seed)?.samples;
    let cfg = TrainConfig {
        d: b.d,
        t_max: b.steps,
        eta: b.eta,
        batch: b.points,
        seed,
        activation: Activation::TopK { k: b.k },
        init: Init::NearData { jitter: b.jitter },
        ..TrainConfig::default()
    };
    let empty = Matrix::zeros(2, 0);
    let (sae, _) = sgd_train(&data, &empty, &cfg, false)?;
    let sae_recon = decode_batch(&sae, &encode_batch(&sae, &cfg.activation, &data)?);

    let kmeans = kmeans_fit(&data, b.clusters, seed, b.kmeans_iters)?;
    let km_recon = Matrix::from_columns(
        &kmeans
            .assignment
            .iter()
            .map(|&a| kmeans.centroids[a].clone())
            .collect::<Vec<_>>(),
    );
    let pa = local_pca_fit(&data, &kmeans.assignment, b.clusters, b.pca_rank)?;
    let pca_recon = pa_reconstruct(&data, &kmeans.assignment, &pa);

    let row = BridgeRow {
        seed,
        kmeans_mse: mean_sq_error(&data, &km_recon),
        sae_mse: mean_sq_error(&data, &sae_recon),
        pca_mse: mean_sq_error(&data, &pca_recon),
    };
    Ok(SeedFit {
        row,
        data,
        kmeans,
        km_recon,
        pca_recon,
        sae,
        sae_recon,
    })
}

fn pa_reconstruct(data: &Matrix, regions: &[usize], model: &PiecewiseAffineAE) -> Matrix {
    let cols: Vec<Vector> = data
        .column_iter()
        .zip(regions)
        .map(|(x, &r)| model.regions[r].apply_affine(&x.into_owned()))
        .collect();
    Matrix::from_columns(&cols)
}

/// Trains the TopK SAE, fits k-means and the local PCA extension on the
/// k-means cells for every seed, and writes `bridge.csv` plus one
/// three-panel SVG per seed.
pub fn cmd_bridge(settings: &Settings, out_dir: &Path) -> Result<BridgeReport> {
    let started = unix_now();
    let cfg = settings.resolve()?;
    let b = &cfg.bridge;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new(
        "bridge",
        settings,
        format!("clusters2d n={} seed=<run seed>", b.points),
        b.seeds.clone(),
        started,
    );
    let mut rows = Vec::with_capacity(b.seeds.len());
    for &seed in &b.seeds {
        let fit = fit_seed(b, seed)?;
        let svg = panels(b, &fit)?;
        write_output(out_dir, &format!("bridge_seed{seed}.svg"), &svg, &mut manifest.outputs)?;
        rows.push(fit.row);
    }
    let report = BridgeReport { rows };
    write_output(out_dir, "bridge.csv", &report.to_csv(), &mut manifest.outputs)?;
    manifest.write(out_dir)?;
    Ok(report)
}

fn panels(b: &BridgeSettings, fit: &SeedFit) -> Result<String> {
    let bbox = BBox::around(&fit.data, 0.15)?;
    let res = b.resolution as f64;
    let voronoi = KthOrderPowerDiagram::new(fit.kmeans.centroids.clone(), vec![0.0; fit.kmeans.k()], 1)?;
    let km_grid = render_cells(&voronoi, bbox, b.resolution)?;
    let sae_grid = render_cells(&enc_to_diagram(&fit.sae, b.k)?, bbox, b.resolution)?;
    let r = &fit.row;
    let specs = [
        (format!("k-means  {:.3e}", r.kmeans_mse), &km_grid, &fit.km_recon),
        (format!("TopK SAE  {:.3e}", r.sae_mse), &sae_grid, &fit.sae_recon),
        (format!("k-means+PCA  {:.3e}", r.pca_mse), &km_grid, &fit.pca_recon),
    ];
    let title_h = 28.0;
    let gap = 12.0;
    let mut doc = SvgDoc::new(3.0 * res + 2.0 * gap, res + title_h);
    for (i, (title, grid, recon)) in specs.iter().enumerate() {
        let x0 = i as f64 * (res + gap);
        doc.text(x0 + res / 2.0, 18.0, 12.0, "middle", title);
        doc.embed(x0, title_h, &panel(grid, &fit.data, recon));
    }
    Ok(doc.finish())
}

fn panel(grid: &CellGrid, data: &Matrix, recon: &Matrix) -> SvgDoc {
    let mut doc = grid.to_svg_doc(Some(data));
    let r = (grid.resolution as f64 / 160.0).max(1.0);
    for (x, y) in data.column_iter().zip(recon.column_iter()) {
        let (ax, ay) = grid.to_pixel(x[0], x[1]);
        let (bx, by) = grid.to_pixel(y[0], y[1]);
        doc.line(ax, ay, bx, by, "#555555", 0.6 * r);
        doc.circle("recon", bx, by, 1.2 * r, "#d62728");
    }
    doc
}
