//! Pixel-grid rendering of 2D cell partitions.

use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Vector};
use crate::par::{self, Exec};
use crate::svg::{label_color, SvgDoc};

use super::{cell_of, CellLabel, KthOrderPowerDiagram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        ensure!(
            xmin < xmax && ymin < ymax,
            "bounding box must have positive extent, got x [{xmin}, {xmax}], y [{ymin}, {ymax}]"
        );
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    /// Square box around the columns of `points` with a relative margin.
    pub fn around(points: &Matrix, margin: f64) -> Result<Self> {
        ensure!(points.nrows() == 2 && points.ncols() > 0, "need a nonempty set of 2D points");
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in points.column_iter() {
            xmin = xmin.min(c[0]);
            xmax = xmax.max(c[0]);
            ymin = ymin.min(c[1]);
            ymax = ymax.max(c[1]);
        }
        let half = 0.5 * (xmax - xmin).max(ymax - ymin).max(1e-6) * (1.0 + 2.0 * margin);
        let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
        Self::new(cx - half, cx + half, cy - half, cy + half)
    }
}

/// Cell label at every pixel center. Row 0 is the top edge (`ymax`).
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub bbox: BBox,
    pub resolution: usize,
    /// Row-major, `resolution * resolution` entries.
    pub labels: Vec<CellLabel>,
    pub centroids: Vec<Vector>,
}

impl CellGrid {
    pub fn pixel_center(bbox: &BBox, resolution: usize, row: usize, col: usize) -> Vector {
        let dx = (bbox.xmax - bbox.xmin) / resolution as f64;
        let dy = (bbox.ymax - bbox.ymin) / resolution as f64;
        Vector::from_column_slice(&[
            bbox.xmin + (col as f64 + 0.5) * dx,
            bbox.ymax - (row as f64 + 0.5) * dy,
        ])
    }

    pub fn label(&self, row: usize, col: usize) -> &CellLabel {
        &self.labels[row * self.resolution + col]
    }

    pub fn distinct_labels(&self) -> Vec<CellLabel> {
        let mut out = self.labels.clone();
        out.sort();
        out.dedup();
        out
    }

    /// Maps a point to SVG pixel coordinates.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let b = &self.bbox;
        let res = self.resolution as f64;
        (
            (x - b.xmin) / (b.xmax - b.xmin) * res,
            (b.ymax - y) / (b.ymax - b.ymin) * res,
        )
    }

    /// One line per pixel row, labels as dash-joined indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in 0..self.resolution {
            let line: Vec<String> = (0..self.resolution)
                .map(|col| self.label(row, col).to_string())
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Renders cells as runs of same-label pixels, then centroids and
    /// optional data points (2 x N) on top.
    pub fn to_svg_doc(&self, points: Option<&Matrix>) -> SvgDoc {
        let res = self.resolution as f64;
        let mut doc = SvgDoc::new(res, res);
        for row in 0..self.resolution {
            let mut start = 0;
            while start < self.resolution {
                let label = self.label(row, start);
                let mut end = start + 1;
                while end < self.resolution && self.label(row, end) == label {
                    end += 1;
                }
                doc.rect(
                    "cell",
                    start as f64,
                    row as f64,
                    (end - start) as f64,
                    1.0,
                    &label_color(label),
                );
                start = end;
            }
        }
        let dot = (res / 120.0).max(1.5);
        if let Some(pts) = points {
            for c in pts.column_iter() {
                let (px, py) = self.to_pixel(c[0], c[1]);
                doc.circle("point", px, py, dot * 0.8, "#333333");
            }
        }
        for mu in &self.centroids {
            let (px, py) = self.to_pixel(mu[0], mu[1]);
            if (0.0..=res).contains(&px) && (0.0..=res).contains(&py) {
                doc.circle("centroid", px, py, dot, "#000000");
            }
        }
        doc
    }

    pub fn to_svg(&self, points: Option<&Matrix>) -> String {
        self.to_svg_doc(points).finish()
    }
}

pub fn render_cells(diag: &KthOrderPowerDiagram, bbox: BBox, resolution: usize) -> Result<CellGrid> {
    render_cells_with(diag, bbox, resolution, Exec::default())
}

/// Labels every pixel center of a `resolution x resolution` grid. Pixels may
/// be evaluated concurrently; the grid is assembled by index.
pub fn render_cells_with(
    diag: &KthOrderPowerDiagram,
    bbox: BBox,
    resolution: usize,
    exec: Exec,
) -> Result<CellGrid> {
    ensure!(diag.dim() == 2, "rendering needs 2D centroids, got n={}", diag.dim());
    ensure!(resolution >= 1, "resolution must be at least 1");
    let labels = par::map_indexed(exec, resolution * resolution, |i| {
        let x = CellGrid::pixel_center(&bbox, resolution, i / resolution, i % resolution);
        cell_of(&x, diag)
    });
    Ok(CellGrid {
        bbox,
        resolution,
        labels,
        centroids: diag.centroids.clone(),
    })
}
