//! Static SVG plots.

use std::path::Path;

use plotters::prelude::*;

use crate::commands::BudgetPoint;

/// Task reward against sensing budget.
pub fn budget_curve_svg(path: &Path, points: &[BudgetPoint], title: &str, y_label: &str) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    let x_max = points.iter().map(|p| p.budget).max().unwrap_or(1).max(1);
    let y_max = points
        .iter()
        .map(|p| p.mean_task_reward)
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0u32..x_max, 0.0..y_max)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("sensing budget")
        .y_desc(y_label)
        .x_labels(x_max as usize + 1)
        .draw()
        .map_err(|e| err(&e))?;
    chart
        .draw_series(LineSeries::new(
            points.iter().map(|p| (p.budget, p.mean_task_reward)),
            &BLUE,
        ))
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))
}
