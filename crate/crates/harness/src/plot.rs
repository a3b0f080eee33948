//! Precision-recall curve rendering (SVG).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use crate::sweep_csv::{self, SweepRow};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

/// Sweep rows grouped per victim, each sorted by threshold.
pub fn curves(rows: &[SweepRow]) -> BTreeMap<String, Vec<SweepRow>> {
    let mut by: BTreeMap<String, Vec<SweepRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.victim.clone()).or_default().push(r.clone());
    }
    for v in by.values_mut() {
        v.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    }
    by
}

/// Renders one recall (x) / precision (y) curve per victim with a marker
/// per threshold, returning the SVG document.
pub fn render_pr_curve(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        bail!("sweep has no rows to plot");
    }
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 480)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Precision-recall over thresholds", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0f64..1f64, 0f64..1f64)?;
        chart.configure_mesh().x_desc("recall").y_desc("precision").draw()?;
        for (i, (victim, pts)) in curves(rows).into_iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.recall, p.precision)).collect();
            chart
                .draw_series(LineSeries::new(xy.clone(), color.stroke_width(2)))?
                .label(victim)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart.draw_series(xy.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
    }
    Ok(svg)
}

/// Reads a sweep CSV and writes the plot to `out`; the CSV is copied next
/// to the image when it lives elsewhere.
pub fn emit_pr_curve(sweep: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(sweep).with_context(|| format!("reading {}", sweep.display()))?;
    let rows = sweep_csv::parse(&text)?;
    let svg = render_pr_curve(&rows)?;
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    let beside = out.with_extension("csv");
    if std::fs::canonicalize(sweep).ok() != std::fs::canonicalize(&beside).ok() {
        std::fs::write(&beside, text).with_context(|| format!("writing {}", beside.display()))?;
    }
    Ok(())
}
