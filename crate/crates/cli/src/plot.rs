use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use demos_core::training::RunConfig;
use plotters::prelude::*;

use crate::report::{self, ConnectionRow, EvalRow, MetricsRow};

const PALETTE: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plot failed: {e:?}")
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    Some((lo - pad, hi + pad))
}

fn label(run: &Path) -> String {
    run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| run.display().to_string())
}

fn eta_of(run: &Path) -> f64 {
    fs::read_to_string(run.join("config.toml"))
        .ok()
        .and_then(|t| RunConfig::from_toml(&t).ok())
        .map_or(0.04, |c| c.analysis.eta)
}

/// Overlaid curves `(name, points)` in one chart.
fn line_chart(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0))).ok_or_else(|| anyhow!("no data"))?;
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1))).ok_or_else(|| anyhow!("no data"))?;
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(draw_err)?;
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied().filter(|p| p.1.is_finite()), &color))
            .map_err(draw_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn reward_curves(runs: &[PathBuf], out: &Path) -> Result<Option<PathBuf>> {
    let mut series = Vec::new();
    for run in runs {
        let path = run.join(report::METRICS_CSV);
        if !path.exists() {
            eprintln!("warning: {} missing, skipped", path.display());
            continue;
        }
        let rows: Vec<MetricsRow> = report::read_rows(&path)?;
        if rows.is_empty() {
            eprintln!("warning: {} is empty, skipped", path.display());
            continue;
        }
        series.push((label(run), rows.iter().map(|r| (r.iteration as f64, r.mean_reward)).collect()));
    }
    if series.is_empty() {
        return Ok(None);
    }
    let file = out.join("reward.svg");
    line_chart(&file, "Mean step reward", "iteration", "reward", &series)?;
    Ok(Some(file))
}

fn connection_grid(run: &Path, out: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let path = run.join(report::CONNECTIONS_CSV);
    if !path.exists() {
        eprintln!("warning: {} missing, skipped", path.display());
        return Ok(None);
    }
    let rows: Vec<ConnectionRow> = report::read_rows(&path)?;
    let n = rows.iter().map(|r| r.from.max(r.to) + 1).max().unwrap_or(0);
    if n == 0 {
        eprintln!("warning: {} is empty, skipped", path.display());
        return Ok(None);
    }
    let mut curves: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        curves.entry((r.from, r.to)).or_default().push((r.iteration as f64, r.relative));
    }
    let (x0, x1) = bounds(rows.iter().map(|r| r.iteration as f64)).expect("non-empty");
    let eta = eta_of(run);
    let file = out.join(format!("connections{suffix}.svg"));
    let root = SVGBackend::new(&file, (240 * n as u32, 200 * n as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    for ((i, j), cell) in (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).zip(root.split_evenly((n, n))) {
        let pts = curves.remove(&(i, j)).unwrap_or_default();
        let y1 = pts.iter().map(|p| p.1).filter(|v| v.is_finite()).fold(eta * 2.0, f64::max) * 1.05;
        let mut chart = ChartBuilder::on(&cell)
            .caption(format!("B{}→B{}", i + 1, j + 1), ("sans-serif", 14))
            .margin(6)
            .x_label_area_size(20)
            .y_label_area_size(36)
            .build_cartesian_2d(x0..x1, 0.0..y1)
            .map_err(draw_err)?;
        chart.configure_mesh().x_labels(3).y_labels(4).draw().map_err(draw_err)?;
        chart.draw_series(LineSeries::new(pts.into_iter().filter(|p| p.1.is_finite()), &BLUE)).map_err(draw_err)?;
        if i != j {
            chart.draw_series(LineSeries::new(vec![(x0, eta), (x1, eta)], &RED)).map_err(draw_err)?;
        }
    }
    root.present().map_err(draw_err)?;
    drop(root);
    Ok(Some(file))
}

fn sweep_curves(runs: &[PathBuf], out: &Path) -> Result<Option<PathBuf>> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut x_desc = String::from("level");
    for run in runs {
        let path = run.join(report::SWEEP_CSV);
        if !path.exists() {
            continue;
        }
        for r in report::read_rows::<EvalRow>(&path)? {
            x_desc = format!("{} level", r.malfunction);
            let name = if runs.len() > 1 { format!("{} {}", label(run), r.label) } else { r.label.clone() };
            series.entry(name).or_default().push((r.level, r.mean_return));
        }
    }
    if series.is_empty() {
        return Ok(None);
    }
    let series: Vec<_> = series
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v)
        })
        .collect();
    let file = out.join("sweep.svg");
    line_chart(&file, "Evaluation return under malfunction", &x_desc, "mean return", &series)?;
    Ok(Some(file))
}

pub fn run(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| runs[0].clone());
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    written.extend(reward_curves(runs, &out)?);
    for (k, run) in runs.iter().enumerate() {
        let suffix = if runs.len() > 1 { format!("_{k}") } else { String::new() };
        written.extend(connection_grid(run, &out, &suffix)?);
    }
    written.extend(sweep_curves(runs, &out)?);
    for f in &written {
        println!("{}", f.display());
    }
    Ok(())
}
