use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{BBoxSpec, Settings};
use super::manifest::{unix_now, RunManifest};
use super::{create_dir, describe_dataset, load_dataset, write_output};
use crate::error::{ensure, Error, Result};
use crate::geometry::{
    cell_of, enc_to_diagram, lift_to_voronoi, reduce_to_power, render_cells, BBox, CellGrid, CellLabel,
    KthOrderPowerDiagram,
};
use crate::numerics::{Matrix, Vector};
use crate::sae::{Activation, SaeParams};

/// A K-th-order power diagram written out by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramSpec {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl DiagramSpec {
    pub fn to_diagram(&self) -> Result<KthOrderPowerDiagram> {
        let centroids = self
            .centroids
            .iter()
            .map(|c| Vector::from_column_slice(c))
            .collect();
        KthOrderPowerDiagram::new(centroids, self.weights.clone(), self.order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaEntry {
    pub cell: String,
    pub centroid: Vec<f64>,
    pub weight: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub resolution: usize,
    pub distinct_cells: usize,
    pub validated_pixels: usize,
    pub matched_pixels: usize,
    pub zeta: Option<Vec<ZetaEntry>>,
}

fn source_diagram(settings: &Settings) -> Result<KthOrderPowerDiagram> {
    let cfg = settings.resolve()?;
    let g = &cfg.geometry;
    if let Some(path) = &g.params {
        let params = SaeParams::load(path)?;
        let k = match (g.k, cfg.train.base.activation) {
            (0, Activation::TopK { k }) => k,
            (0, _) => {
                return Err(Error::Config {
                    line: 0,
                    key: "geometry.k".into(),
                    message: "set a TopK order or a TopK model.activation".into(),
                })
            }
            (k, _) => k,
        };
        return enc_to_diagram(&params, k);
    }
    if let Some(path) = &g.diagram {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: DiagramSpec = serde_json::from_str(&text)?;
        return spec.to_diagram();
    }
    Err(Error::Config {
        line: 0,
        key: "geometry.params".into(),
        message: "set geometry.params or geometry.diagram".into(),
    })
}

/// Renders the cells of a params file or diagram spec, writes `cells.svg`,
/// `labels.csv` and `report.json`, and re-checks a random subset of pixels
/// against a direct cell lookup.
pub fn cmd_geometry(settings: &Settings, out_dir: &Path) -> Result<GeometryReport> {
    let started = unix_now();
    let cfg = settings.resolve()?;
    let g = &cfg.geometry;
    let diag = source_diagram(settings)?;
    ensure!(diag.dim() == 2, "rendering needs 2D centroids, got n={}", diag.dim());

    let points = if g.overlay {
        let ds = load_dataset(&cfg.data)?;
        ensure!(ds.dim() == 2, "overlay dataset must be 2D, got dimension {}", ds.dim());
        Some(ds.samples)
    } else {
        None
    };
    let bbox = match g.bbox {
        BBoxSpec::Fixed([x0, x1, y0, y1]) => BBox::new(x0, x1, y0, y1)?,
        BBoxSpec::Auto => {
            let mut cols: Vec<Vector> = diag.centroids.clone();
            if let Some(p) = &points {
                cols.extend(p.column_iter().map(|c| c.into_owned()));
            }
            BBox::around(&Matrix::from_columns(&cols), 0.1)?
        }
    };
    let grid = render_cells(&diag, bbox, g.resolution)?;
    let (validated, matched) = revalidate(&grid, &diag, g.validate_fraction, g.seed);
    let zeta = if g.zeta { Some(zeta_report(&diag)?) } else { None };
    let report = GeometryReport {
        resolution: g.resolution,
        distinct_cells: grid.distinct_labels().len(),
        validated_pixels: validated,
        matched_pixels: matched,
        zeta,
    };

    create_dir(out_dir)?;
    let dataset = if g.overlay { describe_dataset(&cfg.data) } else { "none".into() };
    let mut manifest = RunManifest::new("geometry", settings, dataset, vec![g.seed], started);
    write_output(out_dir, "cells.svg", &grid.to_svg(points.as_ref()), &mut manifest.outputs)?;
    write_output(out_dir, "labels.csv", &grid.to_csv(), &mut manifest.outputs)?;
    if let Some(z) = &report.zeta {
        let mut csv = String::from("cell,x,y,weight,zeta\n");
        for e in z {
            csv.push_str(&format!("{},{},{},{},{}\n", e.cell, e.centroid[0], e.centroid[1], e.weight, e.zeta));
        }
        write_output(out_dir, "zeta.csv", &csv, &mut manifest.outputs)?;
    }
    write_output(out_dir, "report.json", &serde_json::to_string_pretty(&report)?, &mut manifest.outputs)?;
    manifest.write(out_dir)?;
    Ok(report)
}

/// Recomputes the label of `ceil(fraction * pixels)` distinct random pixels.
fn revalidate(grid: &CellGrid, diag: &KthOrderPowerDiagram, fraction: f64, seed: u64) -> (usize, usize) {
    let total = grid.resolution * grid.resolution;
    let count = ((fraction * total as f64).ceil() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, total, count);
    let matched = picked
        .iter()
        .filter(|&i| {
            let (row, col) = (i / grid.resolution, i % grid.resolution);
            let x = CellGrid::pixel_center(&grid.bbox, grid.resolution, row, col);
            &cell_of(&x, diag) == grid.label(row, col)
        })
        .count();
    (count, matched)
}

/// Lift of the reduced first-order diagram to an equal-weight Voronoi
/// diagram one dimension up.
fn zeta_report(diag: &KthOrderPowerDiagram) -> Result<Vec<ZetaEntry>> {
    let (pd, labels): (_, Vec<CellLabel>) = reduce_to_power(diag)?;
    let lifted = lift_to_voronoi(&pd);
    Ok(labels
        .iter()
        .zip(&pd.centroids)
        .zip(&pd.weights)
        .zip(&lifted)
        .map(|(((label, c), &w), l)| ZetaEntry {
            cell: label.to_string(),
            centroid: c.iter().copied().collect(),
            weight: w,
            zeta: l[c.len()],
        })
        .collect())
}
