//! Minimal SVG line charts for training-curve JSONL files. No external
//! renderer: the output is a self-contained `.svg` with axes, ticks, a
//! legend, and one polyline per series.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads one numeric field pair per JSONL row. Rows where `y_field` is
/// missing or null are skipped (sparse columns like periodic evaluations);
/// a y-field absent from every row is an error.
pub fn series_from_jsonl(
    path: &Path,
    x_field: &str,
    y_field: &str,
    label: &str,
) -> Result<Series> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Plot(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::Plot(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let x = v.get(x_field).and_then(Value::as_f64).ok_or_else(|| {
            Error::Plot(format!("{} line {}: no numeric field {x_field}", path.display(), i + 1))
        })?;
        match v.get(y_field).and_then(Value::as_f64) {
            Some(y) => points.push((x, y)),
            None => continue,
        }
    }
    if points.is_empty() {
        return Err(Error::Plot(format!(
            "{}: field {y_field} never present",
            path.display()
        )));
    }
    Ok(Series { label: label.to_string(), points })
}

fn nice_ticks(lo: f64, hi: f64, want: usize) -> Vec<f64> {
    if !(hi - lo).is_finite() || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / want as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| (hi - lo) / s <= want as f64)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = start;
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1_000_000.0 {
        format!("{:.1}M", v / 1_000_000.0)
    } else if a >= 10_000.0 {
        format!("{:.0}k", v / 1_000.0)
    } else if a >= 1.0 {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a complete SVG line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Plot("nothing to plot".into()));
    }
    let all = series.iter().flat_map(|s| &s.points);
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = move |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    ));

    // Gridlines and ticks.
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#ddd\" stroke-width=\"1\"/>\n",
            WIDTH - MARGIN_R
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0,
            fmt_tick(t)
        ));
    }
    for t in nice_ticks(x_lo, x_hi, 7) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
             stroke=\"#eee\" stroke-width=\"1\"/>\n",
            MARGIN_T,
            HEIGHT - MARGIN_B
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            fmt_tick(t)
        ));
    }

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" \
         stroke=\"black\"/>\n<line x1=\"{MARGIN_L}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" \
         stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        esc(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 18 {})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(y_label)
    ));

    // Series polylines and legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            pts.join(" ")
        ));
        let ly = MARGIN_T + 8.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_R - 150.0,
            WIDTH - MARGIN_R - 126.0,
            WIDTH - MARGIN_R - 120.0,
            ly + 4.0,
            esc(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Plots one or more curve files into one SVG.
pub fn plot_files(
    inputs: &[(std::path::PathBuf, String)],
    x_field: &str,
    y_field: &str,
    title: &str,
    out: &Path,
) -> Result<()> {
    let series: Vec<Series> = inputs
        .iter()
        .map(|(p, label)| series_from_jsonl(p, x_field, y_field, label))
        .collect::<Result<_>>()?;
    let svg = line_chart(title, x_field, y_field, &series)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_axes_series_and_legend() {
        let s = vec![
            Series { label: "alpha".into(), points: vec![(0.0, 1.0), (10.0, 3.0), (20.0, 2.0)] },
            Series { label: "beta".into(), points: vec![(0.0, 0.5), (20.0, 2.5)] },
        ];
        let svg = line_chart("Loss over steps", "step", "loss", &s).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("alpha") && svg.contains("beta"));
        assert!(svg.contains("Loss over steps"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn jsonl_series_skips_sparse_rows_and_errors_on_missing_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.jsonl");
        std::fs::write(
            &path,
            "{\"step\":0,\"loss\":2.5}\n{\"step\":10,\"loss\":1.5,\"eval\":0.5}\n\
             {\"step\":20,\"loss\":1.0}\n",
        )
        .unwrap();
        let s = series_from_jsonl(&path, "step", "loss", "run").unwrap();
        assert_eq!(s.points, vec![(0.0, 2.5), (10.0, 1.5), (20.0, 1.0)]);
        // Sparse column keeps only rows that carry it.
        let e = series_from_jsonl(&path, "step", "eval", "run").unwrap();
        assert_eq!(e.points, vec![(10.0, 0.5)]);
        // Entirely missing column is an error.
        assert!(series_from_jsonl(&path, "step", "nope", "run").is_err());
    }

    #[test]
    fn plot_files_writes_svg() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.jsonl");
        std::fs::write(&c, "{\"step\":0,\"loss\":1.0}\n{\"step\":5,\"loss\":0.2}\n").unwrap();
        let out = dir.path().join("plot.svg");
        plot_files(&[(c, "curve".into())], "step", "loss", "t", &out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.contains("</svg>"));
    }

    #[test]
    fn tick_generation_spans_the_range() {
        let t = nice_ticks(0.0, 500_000.0, 7);
        assert!(t.len() >= 3 && t.len() <= 9);
        assert!(t.first().copied().unwrap() >= 0.0);
        assert!(t.last().copied().unwrap() <= 500_000.0 + 1.0);
        let u = nice_ticks(0.13, 0.92, 6);
        assert!(u.iter().all(|v| (0.13..=0.93).contains(v)));
    }
}
