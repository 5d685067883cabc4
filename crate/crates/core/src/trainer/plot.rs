//! Static SVG figures: error curves per layer and regression traces.

use std::path::Path;

use plotters::prelude::*;

use super::metrics::RunMetrics;
use crate::{Error, Result};

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Classification error against minibatch iteration, one line per layer.
pub fn error_curves(metrics: &RunMetrics, path: &Path) -> Result<()> {
    let layers = metrics.eval.iter().map(|r| r.layer + 1).max().unwrap_or(0);
    let x_max = metrics.eval.iter().map(|r| r.iteration).max().unwrap_or(1).max(1) as f64;
    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..x_max, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("minibatch")
        .y_desc("error")
        .draw()
        .map_err(plot_err)?;
    for l in 0..layers {
        let color = COLORS[l % COLORS.len()];
        let pts: Vec<(f64, f64)> = metrics
            .layer_eval(l)
            .into_iter()
            .filter_map(|r| r.error.map(|e| (r.iteration as f64, e)))
            .collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("layer {}", l + 1))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// One panel per layer: readout (solid) and its target (dashed grey) over time.
pub fn regression_traces(readouts: &[Vec<f64>], targets: &[Vec<f64>], dt_ms: f64, path: &Path) -> Result<()> {
    let n = readouts.len().max(1);
    let root = SVGBackend::new(path, (720, 240 * n as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((n, 1));
    for (l, (panel, (y, t))) in panels.iter().zip(readouts.iter().zip(targets)).enumerate() {
        let t_max = y.len().max(1) as f64 * dt_ms;
        let (lo, hi) = y
            .iter()
            .chain(t)
            .fold((0.0f64, 1.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mut chart = ChartBuilder::on(panel)
            .margin(10)
            .caption(format!("layer {}", l + 1), ("sans-serif", 16))
            .x_label_area_size(30)
            .y_label_area_size(44)
            .build_cartesian_2d(0.0..t_max, lo - 0.05..hi + 0.05)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("time (ms)").draw().map_err(plot_err)?;
        let series = |v: &Vec<f64>| {
            v.iter()
                .enumerate()
                .map(|(k, &x)| (k as f64 * dt_ms, x))
                .collect::<Vec<_>>()
        };
        chart
            .draw_series(LineSeries::new(series(t), RGBColor(120, 120, 120).stroke_width(2)))
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(series(y), COLORS[l % COLORS.len()].stroke_width(1)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
