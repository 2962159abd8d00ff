// SPDX-License-Identifier: MIT OR Apache-2.0

//! SVG charts: ROC, rejection-accuracy curve, layer sweep and answer
//! truncation sweep.

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::training::{LayerRow, TruncationRow};

const SIZE: (u32, u32) = (640, 480);
const SECOND: RGBColor = RGBColor(214, 96, 40);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// A titled chart of one or more line series over the given ranges.
fn line_chart(
    title: &str,
    x_desc: &str,
    y_desc: &str,
    x: std::ops::Range<f64>,
    y: std::ops::Range<f64>,
    series: &[(&str, Vec<(f64, f64)>, RGBColor)],
    diagonal: bool,
) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(45)
            .y_label_area_size(55)
            .build_cartesian_2d(x.clone(), y)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(x_desc)
            .y_desc(y_desc)
            .draw()
            .map_err(plot_err)?;
        if diagonal {
            chart
                .draw_series(LineSeries::new([(x.start, x.start), (x.end, x.end)], BLACK.mix(0.3)))
                .map_err(plot_err)?;
        }
        for (name, points, color) in series {
            let color = *color;
            chart
                .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        if series.len() > 1 {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .position(SeriesLabelPosition::LowerRight)
                .draw()
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Vertical range covering `values` with a little headroom, clipped to [0, 1].
fn unit_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.1).max(0.02);
    (lo - pad).max(0.0)..(hi + pad).min(1.0)
}

pub fn roc_svg(report: &EvalReport) -> Result<String> {
    let points = report.roc.iter().map(|p| (p.fpr, p.tpr)).collect();
    line_chart(
        &format!("ROC (AUROC = {:.4})", report.auroc),
        "False positive rate",
        "True positive rate",
        0.0..1.0,
        0.0..1.0,
        &[("ROC", points, BLUE)],
        true,
    )
}

pub fn rac_svg(report: &EvalReport) -> Result<String> {
    let points: Vec<(f64, f64)> = report.rac.iter().map(|p| (p.coverage, p.accuracy)).collect();
    let y = unit_range(points.iter().map(|p| p.1));
    line_chart(
        &format!("Rejection-Accuracy Curve (AURAC = {:.4})", report.aurac),
        "Coverage",
        "Accuracy",
        0.0..1.0,
        y,
        &[("RAC", points, BLUE)],
        false,
    )
}

pub fn layer_sweep_svg(rows: &[LayerRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no layer rows to plot".into()));
    }
    let auroc: Vec<(f64, f64)> = rows.iter().map(|r| (r.layer_index as f64, r.auroc)).collect();
    let aurac: Vec<(f64, f64)> = rows.iter().map(|r| (r.layer_index as f64, r.aurac)).collect();
    let lo = rows.iter().map(|r| r.layer_index).min().unwrap() as f64;
    let hi = rows.iter().map(|r| r.layer_index).max().unwrap() as f64;
    let y = unit_range(auroc.iter().chain(&aurac).map(|p| p.1));
    line_chart(
        "Detection performance by layer",
        "Layer",
        "Score",
        lo - 0.5..hi + 0.5,
        y,
        &[("AUROC", auroc, BLUE), ("AURAC", aurac, SECOND)],
        false,
    )
}

pub fn truncation_svg(rows: &[TruncationRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no truncation rows to plot".into()));
    }
    let auroc: Vec<(f64, f64)> = rows.iter().map(|r| (100.0 * r.fraction, r.report.auroc)).collect();
    let aurac: Vec<(f64, f64)> = rows.iter().map(|r| (100.0 * r.fraction, r.report.aurac)).collect();
    let y = unit_range(auroc.iter().chain(&aurac).map(|p| p.1));
    line_chart(
        "Detection performance by answer tokens seen",
        "Answer tokens used (%)",
        "Score",
        0.0..100.0,
        y,
        &[("AUROC", auroc, BLUE), ("AURAC", aurac, SECOND)],
        false,
    )
}
