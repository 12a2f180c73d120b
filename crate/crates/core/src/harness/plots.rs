//! SVG line charts of training metrics.

use std::ops::Range;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::metrics::MetricsRecord;
use crate::error::{Error, Result};

const SIZE: (u32, u32) = (900, 480);
const LOSS_COLOR: RGBColor = RGBColor(200, 40, 40);
const REWARD_COLOR: RGBColor = RGBColor(40, 70, 200);
const SUCCESS_COLOR: RGBColor = RGBColor(30, 150, 60);

fn draw_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Padded finite `[min, max]` of `values`.
fn span(values: impl Iterator<Item = f64>) -> Range<f64> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad)..(hi + pad)
}

fn x_range(records: &[MetricsRecord]) -> Range<f64> {
    let first = records[0].meta_iteration as f64;
    let last = records[records.len() - 1].meta_iteration as f64;
    first..last.max(first + 1.0)
}

/// One metric against meta-iteration.
pub fn line_chart(
    path: &Path,
    records: &[MetricsRecord],
    title: &str,
    y_range: Option<Range<f64>>,
    value: impl Fn(&MetricsRecord) -> f64,
    color: RGBColor,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Insufficient("no metrics to plot".into()));
    }
    let y = y_range.unwrap_or_else(|| span(records.iter().map(&value)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x_range(records), y)
        .map_err(|e| draw_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("meta-iteration")
        .y_desc(title)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    chart
        .draw_series(LineSeries::new(
            records.iter().map(|r| (r.meta_iteration as f64, value(r))),
            &color,
        ))
        .map_err(|e| draw_err(path, e))?;
    root.present().map_err(|e| draw_err(path, e))
}

/// Meta-loss and average reward on the left axis, success rate on a [0, 1]
/// right axis.
pub fn combined_chart(path: &Path, records: &[MetricsRecord], title: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Insufficient("no metrics to plot".into()));
    }
    let y = span(records.iter().flat_map(|r| [r.meta_loss, r.avg_reward]));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .right_y_label_area_size(48)
        .build_cartesian_2d(x_range(records), y)
        .map_err(|e| draw_err(path, e))?
        .set_secondary_coord(x_range(records), 0.0..1.0);
    chart
        .configure_mesh()
        .x_desc("meta-iteration")
        .y_desc("meta-loss / average reward")
        .draw()
        .map_err(|e| draw_err(path, e))?;
    chart
        .configure_secondary_axes()
        .y_desc("success rate")
        .draw()
        .map_err(|e| draw_err(path, e))?;
    let point = |f: fn(&MetricsRecord) -> f64| {
        records
            .iter()
            .map(move |r| (r.meta_iteration as f64, f(r)))
    };
    chart
        .draw_series(LineSeries::new(point(|r| r.meta_loss), &LOSS_COLOR))
        .map_err(|e| draw_err(path, e))?
        .label("meta-loss")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], LOSS_COLOR));
    chart
        .draw_series(LineSeries::new(point(|r| r.avg_reward), &REWARD_COLOR))
        .map_err(|e| draw_err(path, e))?
        .label("average reward")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], REWARD_COLOR));
    chart
        .draw_secondary_series(LineSeries::new(point(|r| r.success_rate), &SUCCESS_COLOR))
        .map_err(|e| draw_err(path, e))?
        .label("success rate")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], SUCCESS_COLOR));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    root.present().map_err(|e| draw_err(path, e))
}

/// Success-rate curves of several runs on one [0, 1] axis.
pub fn comparison_chart(path: &Path, runs: &[(&str, &[MetricsRecord])]) -> Result<()> {
    let all: Vec<&MetricsRecord> = runs.iter().flat_map(|(_, r)| r.iter()).collect();
    if all.is_empty() {
        return Err(Error::Insufficient("no metrics to plot".into()));
    }
    let last = all.iter().map(|r| r.meta_iteration).max().unwrap_or(1) as f64;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("success rate by variant", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(1.0..last.max(2.0), 0.0..1.0)
        .map_err(|e| draw_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("meta-iteration")
        .y_desc("success rate")
        .draw()
        .map_err(|e| draw_err(path, e))?;
    for (i, (name, records)) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                records.iter().map(|r| (r.meta_iteration as f64, r.success_rate)),
                color,
            ))
            .map_err(|e| draw_err(path, e))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(path, e))?;
    root.present().map_err(|e| draw_err(path, e))
}

/// Writes `meta_loss.svg`, `avg_reward.svg`, `success_rate.svg` and
/// `combined.svg` into `dir`; returns their paths.
pub fn emit_plots(dir: &Path, records: &[MetricsRecord]) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Insufficient("metrics file has no rows to plot".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = |name: &str| dir.join(name);
    line_chart(&out("meta_loss.svg"), records, "meta-loss", None, |r| r.meta_loss, LOSS_COLOR)?;
    line_chart(&out("avg_reward.svg"), records, "average reward", None, |r| r.avg_reward, REWARD_COLOR)?;
    line_chart(
        &out("success_rate.svg"),
        records,
        "success rate",
        Some(0.0..1.0),
        |r| r.success_rate,
        SUCCESS_COLOR,
    )?;
    combined_chart(&out("combined.svg"), records, "training progress")?;
    Ok(["meta_loss.svg", "avg_reward.svg", "success_rate.svg", "combined.svg"]
        .iter()
        .map(|n| out(n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<MetricsRecord> {
        (1..=n)
            .map(|i| MetricsRecord {
                meta_iteration: i,
                meta_loss: 30.0 / (1.0 + i as f64 * 0.01),
                avg_reward: -10.0 + (i as f64).sqrt(),
                success_rate: (i as f64 / n as f64).min(1.0),
                level: 1,
                mean_intrinsic: 0.5,
                wall_time: 0.0,
            })
            .collect()
    }

    #[test]
    fn writes_four_svgs() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plots(dir.path(), &records(500)).unwrap();
        assert_eq!(paths.len(), 4);
        for p in paths {
            let text = std::fs::read_to_string(&p).unwrap();
            assert!(text.starts_with("<svg"), "{}", p.display());
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_plots(dir.path(), &[]).unwrap_err();
        assert!(err.to_string().contains("no rows"));
    }
}
