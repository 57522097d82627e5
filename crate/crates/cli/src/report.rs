//! Renders a sweep CSV as an SVG: mean latency and failure rate against
//! whichever column the sweep varied.

use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct Row {
    pub flight_size: u32,
    pub p: f64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    pub failure_rate: f64,
    pub failure_stderr: f64,
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = reader.deserialize().collect::<Result<Vec<Row>, _>>().context("not a sweep CSV")?;
    if rows.is_empty() {
        bail!("{} holds no rows", path.display());
    }
    Ok(rows)
}

fn axis(rows: &[Row]) -> (&'static str, Vec<f64>) {
    let sizes_vary = rows.windows(2).any(|w| w[0].flight_size != w[1].flight_size);
    if sizes_vary {
        ("flight size", rows.iter().map(|r| r.flight_size as f64).collect())
    } else {
        ("failure probability p", rows.iter().map(|r| r.p).collect())
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn draw(rows: &[Row], out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let (x_label, xs) = axis(rows);
    let root = SVGBackend::new(out, (960, 420)).into_drawing_area();
    root.fill(&WHITE)?;
    let (left, right) = root.split_horizontally(480);
    let x_range = span(xs.iter().copied());

    let latency: Vec<(f64, f64)> = xs.iter().zip(rows).map(|(&x, r)| (x, r.mean_latency_ms)).collect();
    let worst: Vec<(f64, f64)> = xs.iter().zip(rows).map(|(&x, r)| (x, r.max_latency_ms)).collect();
    let y = span(latency.iter().chain(&worst).map(|p| p.1).chain([0.0]));
    let mut chart = ChartBuilder::on(&left)
        .caption("job latency (ms)", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x_range.0..x_range.1, 0f64.max(y.0)..y.1)?;
    chart.configure_mesh().x_desc(x_label).draw()?;
    chart.draw_series(LineSeries::new(latency.clone(), &BLUE))?.label("mean").legend(|(x, y)| {
        PathElement::new([(x, y), (x + 16, y)], BLUE)
    });
    chart.draw_series(latency.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))?;
    chart.draw_series(LineSeries::new(worst, &RED))?.label("max").legend(|(x, y)| {
        PathElement::new([(x, y), (x + 16, y)], RED)
    });
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw()?;

    let failure: Vec<(f64, f64)> = xs.iter().zip(rows).map(|(&x, r)| (x, r.failure_rate)).collect();
    let hi = rows.iter().map(|r| r.failure_rate + 2.0 * r.failure_stderr).fold(0.0, f64::max).max(0.01);
    let mut chart = ChartBuilder::on(&right)
        .caption("job failure rate", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x_range.0..x_range.1, 0f64..hi * 1.05)?;
    chart.configure_mesh().x_desc(x_label).draw()?;
    chart.draw_series(LineSeries::new(failure.clone(), &BLACK))?;
    chart.draw_series(xs.iter().zip(rows).map(|(&x, r)| {
        PathElement::new(
            [(x, (r.failure_rate - 2.0 * r.failure_stderr).max(0.0)), (x, r.failure_rate + 2.0 * r.failure_stderr)],
            BLACK,
        )
    }))?;
    chart.draw_series(failure.iter().map(|&p| Circle::new(p, 3, BLACK.filled())))?;
    root.present()?;
    Ok(())
}

pub fn render(input: &Path, output: &Path) -> Result<()> {
    let rows = read_rows(input)?;
    draw(&rows, output).map_err(|e| anyhow::anyhow!("rendering {}: {e}", output.display()))
}
