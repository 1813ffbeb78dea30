use crate::svg::{SvgDoc, SERIES};
use crate::trainer::RunLog;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Polyline plot of one or more series on shared linear axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut doc = SvgDoc::new(WIDTH, HEIGHT);
    doc.rect("background", 0.0, 0.0, WIDTH, HEIGHT, "#ffffff");
    doc.text(WIDTH / 2.0, 24.0, 16.0, "middle", title);
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        doc.text(WIDTH / 2.0, HEIGHT / 2.0, 14.0, "middle", "no data");
        return doc.finish();
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    doc.line(left, bottom, right, bottom, "#000000", 1.0);
    doc.line(left, bottom, left, top, "#000000", 1.0);
    doc.text(left, bottom + 16.0, 11.0, "middle", &tick(x0));
    doc.text(right, bottom + 16.0, 11.0, "middle", &tick(x1));
    doc.text(left - 6.0, bottom, 11.0, "end", &tick(y0));
    doc.text(left - 6.0, top + 4.0, 11.0, "end", &tick(y1));
    doc.text((left + right) / 2.0, HEIGHT - 14.0, 12.0, "middle", x_label);
    doc.text(14.0, (top + bottom) / 2.0, 12.0, "start", y_label);

    for (i, s) in series.iter().enumerate() {
        let color = SERIES[i % SERIES.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        if pts.len() == 1 {
            doc.circle("series", pts[0].0, pts[0].1, 2.5, color);
        } else if !pts.is_empty() {
            doc.polyline(&pts, color, 1.5);
        }
        let ly = top + 14.0 * i as f64;
        doc.line(right - 110.0, ly - 4.0, right - 90.0, ly - 4.0, color, 2.0);
        doc.text(right - 86.0, ly, 11.0, "start", &s.name);
    }
    doc.finish()
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Training and test mean squared error per outer iteration.
pub fn loss_curves(log: &RunLog, train_count: usize, title: &str) -> String {
    let denom = train_count.max(1) as f64;
    let train = Series {
        name: "train mse".into(),
        points: log
            .records
            .iter()
            .map(|r| (r.iter as f64, r.train.reconstruction / denom))
            .collect(),
    };
    let test = Series {
        name: "test mse".into(),
        points: log
            .records
            .iter()
            .filter_map(|r| r.test_mse.map(|m| (r.iter as f64, m)))
            .collect(),
    };
    line_plot(title, "outer iteration", "mse", &[train, test])
}
